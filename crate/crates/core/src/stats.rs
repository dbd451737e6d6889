//! Minibatch degree distributions `P_D(d)` and expected degree `E[D]`.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::StatsError;
use crate::graph::{EntityId, Triple};
use crate::sampler::{Minibatch, Sampler, SamplerPolicy};

/// Probability mass over within-batch total degree, averaged over
/// `num_batches` minibatch subgraphs.
#[derive(Clone, Debug, PartialEq)]
pub struct DegreeHistogram {
    masses: BTreeMap<usize, f64>,
    num_batches: usize,
}

impl DegreeHistogram {
    pub fn probability(&self, degree: usize) -> f64 {
        self.masses.get(&degree).copied().unwrap_or(0.0)
    }

    /// `(degree, mass)` pairs in ascending degree order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.masses.iter().map(|(&d, &p)| (d, p))
    }

    pub fn num_batches(&self) -> usize {
        self.num_batches
    }

    pub fn d_max(&self) -> usize {
        self.masses.keys().next_back().copied().unwrap_or(0)
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.values().sum()
    }

    pub fn expected_degree(&self) -> f64 {
        expected_degree(self)
    }
}

/// Degree distribution of the subgraph formed by `triples`; a self-loop adds
/// 2 to its entity.
pub fn triples_degree_distribution(triples: &[Triple]) -> Result<DegreeHistogram, StatsError> {
    if triples.is_empty() {
        return Err(StatsError::EmptyMinibatch);
    }
    let mut degree: BTreeMap<EntityId, usize> = BTreeMap::new();
    for t in triples {
        *degree.entry(t.subject).or_default() += 1;
        *degree.entry(t.object).or_default() += 1;
    }
    let n = degree.len() as f64;
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for d in degree.into_values() {
        *counts.entry(d).or_default() += 1;
    }
    Ok(DegreeHistogram {
        masses: counts.into_iter().map(|(d, c)| (d, c as f64 / n)).collect(),
        num_batches: 1,
    })
}

pub fn minibatch_degree_distribution(m: &Minibatch) -> Result<DegreeHistogram, StatsError> {
    triples_degree_distribution(&m.positives)
}

/// Unweighted mean of per-batch distributions.
pub fn averaged_distribution(
    histograms: &[DegreeHistogram],
) -> Result<DegreeHistogram, StatsError> {
    if histograms.is_empty() {
        return Err(StatsError::NoHistograms);
    }
    let n = histograms.len() as f64;
    let mut masses: BTreeMap<usize, f64> = BTreeMap::new();
    for h in histograms {
        for (d, p) in h.iter() {
            *masses.entry(d).or_default() += p;
        }
    }
    for p in masses.values_mut() {
        *p /= n;
    }
    Ok(DegreeHistogram {
        masses,
        num_batches: histograms.iter().map(|h| h.num_batches).sum(),
    })
}

/// First moment `Σ_d P_D(d) · d`.
pub fn expected_degree(h: &DegreeHistogram) -> f64 {
    h.iter().map(|(d, p)| p * d as f64).sum()
}

/// Per-batch `E[D]` values and the averaged distribution for one policy.
#[derive(Clone, Debug)]
pub struct PolicyMeasurement {
    pub policy: SamplerPolicy,
    pub histogram: DegreeHistogram,
    pub per_batch: Vec<f64>,
    /// Mean minibatch size in triples.
    pub mean_batch_len: f64,
}

impl PolicyMeasurement {
    pub fn mean(&self) -> f64 {
        self.per_batch.iter().sum::<f64>() / self.per_batch.len() as f64
    }

    /// Standard error of the mean; NaN with fewer than two batches.
    pub fn std_error(&self) -> f64 {
        let n = self.per_batch.len();
        if n < 2 {
            return f64::NAN;
        }
        let mean = self.mean();
        let var = self
            .per_batch
            .iter()
            .map(|x| (x - mean).powi(2))
            .sum::<f64>()
            / (n - 1) as f64;
        (var / n as f64).sqrt()
    }
}

/// Draws `num_batches` independent minibatches and records their degree
/// statistics.
pub fn measure_batches(
    batches: impl IntoIterator<Item = Minibatch>,
    policy: &SamplerPolicy,
) -> Result<PolicyMeasurement, StatsError> {
    let mut histograms = Vec::new();
    let mut per_batch = Vec::new();
    let mut total_len = 0usize;
    for m in batches {
        let h = minibatch_degree_distribution(&m)?;
        per_batch.push(h.expected_degree());
        total_len += m.len();
        histograms.push(h);
    }
    let histogram = averaged_distribution(&histograms)?;
    Ok(PolicyMeasurement {
        policy: policy.clone(),
        histogram,
        mean_batch_len: total_len as f64 / per_batch.len() as f64,
        per_batch,
    })
}

pub fn measure_policy(
    g: &crate::graph::KnowledgeGraph,
    policy: &SamplerPolicy,
    num_batches: usize,
) -> Result<PolicyMeasurement, StatsError> {
    let mut sampler = Sampler::new(g, policy.clone())?;
    measure_batches((0..num_batches).map(|_| sampler.sample()), policy)
}

/// One row of the E[D]-versus-batch-size table.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub policy: String,
    pub batch_size: usize,
    pub expected_degree: f64,
    pub std_error: f64,
    pub num_batches: usize,
}

pub const MIN_SWEEP_BATCHES: usize = 30;

/// Mean `E[D]` with standard error for every `(policy, batch size)` pair.
/// Each point gets its own sampler seeded from the policy seed and `b`.
pub fn ed_vs_batchsize_sweep(
    g: &crate::graph::KnowledgeGraph,
    policies: &[SamplerPolicy],
    batch_sizes: &[usize],
    batches_per_point: usize,
) -> Result<Vec<SweepRow>, StatsError> {
    if batches_per_point < MIN_SWEEP_BATCHES {
        return Err(StatsError::TooFewBatches {
            min: MIN_SWEEP_BATCHES,
            got: batches_per_point,
        });
    }
    let mut rows = Vec::new();
    for policy in policies {
        for &b in batch_sizes {
            let mut p = policy.clone();
            p.batch_size = b;
            p.seed = policy.seed.wrapping_mul(1_000_003).wrapping_add(b as u64);
            let m = measure_policy(g, &p, batches_per_point)?;
            rows.push(SweepRow {
                policy: policy.kind.label().to_owned(),
                batch_size: b,
                expected_degree: m.mean(),
                std_error: m.std_error(),
                num_batches: batches_per_point,
            });
        }
    }
    Ok(rows)
}

fn fmt_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

/// `policy,batch_size,expected_degree,std_error,num_batches`; an undefined
/// standard error is left empty.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "policy,batch_size,expected_degree,std_error,num_batches"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.policy,
            r.batch_size,
            fmt_float(r.expected_degree),
            fmt_float(r.std_error),
            r.num_batches
        )?;
    }
    Ok(())
}

/// `policy,batch_size,degree,probability`, one row per observed degree.
pub fn write_distribution_csv<'a, W: Write>(
    rows: impl IntoIterator<Item = (&'a str, usize, &'a DegreeHistogram)>,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "policy,batch_size,degree,probability")?;
    for (policy, b, h) in rows {
        for (d, p) in h.iter() {
            writeln!(out, "{policy},{b},{d},{p}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::KnowledgeGraph;
    use crate::sampler::SamplerKind;

    fn t(s: usize, o: usize) -> Triple {
        Triple::new(s, 0, o)
    }

    #[test]
    fn single_triple() {
        let h = triples_degree_distribution(&[t(0, 1)]).unwrap();
        assert_eq!(h.probability(1), 1.0);
        assert_eq!(h.expected_degree(), 1.0);
    }

    #[test]
    fn chain_and_triangle() {
        let h = triples_degree_distribution(&[t(0, 1), t(1, 2), t(2, 3)]).unwrap();
        assert_eq!(h.probability(1), 0.5);
        assert_eq!(h.probability(2), 0.5);
        let h = triples_degree_distribution(&[t(0, 1), t(1, 2), t(2, 0)]).unwrap();
        assert_eq!(h.probability(2), 1.0);
        assert_eq!(h.d_max(), 2);
        assert_eq!(h.probability(0), 0.0);
    }

    #[test]
    fn empty_inputs_rejected() {
        assert!(matches!(
            triples_degree_distribution(&[]),
            Err(StatsError::EmptyMinibatch)
        ));
        assert!(matches!(
            averaged_distribution(&[]),
            Err(StatsError::NoHistograms)
        ));
    }

    #[test]
    fn averaging() {
        let a = triples_degree_distribution(&[t(0, 1)]).unwrap();
        let b = triples_degree_distribution(&[t(0, 1), t(1, 2), t(2, 0)]).unwrap();
        assert_eq!(averaged_distribution(std::slice::from_ref(&a)).unwrap(), a);
        let m = averaged_distribution(&[a, b]).unwrap();
        assert_eq!(m.probability(1), 0.5);
        assert_eq!(m.probability(2), 0.5);
        assert_eq!(m.num_batches(), 2);
    }

    #[test]
    fn expected_degree_arithmetic() {
        let h = DegreeHistogram {
            masses: [(1, 0.5), (3, 0.5)].into_iter().collect(),
            num_batches: 1,
        };
        assert_eq!(expected_degree(&h), 2.0);
    }

    #[test]
    fn sweep_rejects_small_n_and_full_batch_matches_graph_degree() {
        let g = crate::synthetic::sweep_graph(0);
        let sr = SamplerPolicy::new(SamplerKind::Sr, 1);
        assert!(ed_vs_batchsize_sweep(&g, std::slice::from_ref(&sr), &[10], 5).is_err());
        let rows = ed_vs_batchsize_sweep(&g, &[sr], &[g.train().len()], 30).unwrap();
        // Entities outside the batch graph are excluded, so compare against
        // the mean over non-isolated entities.
        let active = g.active_entities().len() as f64;
        let expect = 2.0 * g.train().len() as f64 / active;
        assert!((rows[0].expected_degree - expect).abs() < 1e-9);
        assert!(rows[0].std_error.abs() < 1e-9);
    }

    #[test]
    fn csv_schemas() {
        let rows = vec![SweepRow {
            policy: "sr".into(),
            batch_size: 4,
            expected_degree: 1.5,
            std_error: f64::NAN,
            num_batches: 1,
        }];
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "policy,batch_size,expected_degree,std_error,num_batches\nsr,4,1.5,,1\n"
        );
        let h = triples_degree_distribution(&[t(0, 1)]).unwrap();
        let mut buf = Vec::new();
        write_distribution_csv([("rw", 8, &h)], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "policy,batch_size,degree,probability\nrw,8,1,1\n"
        );
    }

    #[test]
    fn measurement_standard_error() {
        let g = KnowledgeGraph::from_train(3, 1, vec![t(0, 1), t(1, 2)]).unwrap();
        let m = measure_policy(&g, &SamplerPolicy::new(SamplerKind::Sr, 2), 3).unwrap();
        assert!((m.mean() - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.std_error(), 0.0);
        let one = measure_policy(&g, &SamplerPolicy::new(SamplerKind::Sr, 2), 1).unwrap();
        assert!(one.std_error().is_nan());
        assert_eq!(one.histogram.num_batches(), 1);
    }
}
