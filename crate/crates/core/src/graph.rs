//! Knowledge-graph storage: dense id dictionaries, split triple lists, an
//! incidence index over the train split and a membership index over all
//! splits.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::GraphError;

pub type EntityId = usize;
pub type RelationId = usize;

/// A directed labeled edge `(subject, relation, object)`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
}

impl Triple {
    pub const fn new(subject: EntityId, relation: RelationId, object: EntityId) -> Self {
        Triple {
            subject,
            relation,
            object,
        }
    }

    pub fn is_self_loop(&self) -> bool {
        self.subject == self.object
    }

    /// The endpoint opposite to `v`; a self-loop returns `v` itself.
    pub fn other_endpoint(&self, v: EntityId) -> EntityId {
        if self.subject == v {
            self.object
        } else {
            self.subject
        }
    }

    pub fn touches(&self, v: EntityId) -> bool {
        self.subject == v || self.object == v
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.txt",
            Split::Valid => "valid.txt",
            Split::Test => "test.txt",
        }
    }

    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!(
                "unknown split `{other}` (expected train, valid or test)"
            )),
        }
    }
}

/// Bidirectional name <-> dense id mapping, ids assigned in first-seen order.
#[derive(Clone, Debug, Default)]
pub struct Dictionary {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Dictionary {
    pub fn from_names(names: Vec<String>) -> Self {
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Dictionary { names, index }
    }

    fn numbered(count: usize) -> Self {
        Self::from_names((0..count).map(|i| i.to_string()).collect())
    }

    fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Writes `id<TAB>name` lines.
    pub fn write_tsv(&self, path: &Path) -> Result<(), GraphError> {
        let io_err = |source| GraphError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
        for (id, name) in self.names.iter().enumerate() {
            writeln!(out, "{id}\t{name}").map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }

    /// Reads a dictionary written by [`Dictionary::write_tsv`]. Ids must be
    /// `0..n` in order.
    pub fn read_tsv(path: &Path) -> Result<Self, GraphError> {
        let io_err = |source| GraphError::Io {
            path: path.to_path_buf(),
            source,
        };
        let reader = BufReader::new(File::open(path).map_err(io_err)?);
        let mut names = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(io_err)?;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.splitn(2, '\t').collect();
            let malformed = GraphError::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                found: cols.len(),
            };
            if cols.len() != 2 || cols[0].parse::<usize>().ok() != Some(names.len()) {
                return Err(malformed);
            }
            names.push(cols[1].to_owned());
        }
        Ok(Self::from_names(names))
    }
}

/// Dataset-level counts, including the anomalies the loader reports rather
/// than assumes away.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraphSummary {
    pub entities: usize,
    pub relations: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub mean_degree: f64,
    pub median_degree: f64,
    pub max_degree: usize,
    pub isolated_entities: usize,
    pub self_loops: usize,
    /// Triples occurring in more than one split.
    pub cross_split_duplicates: usize,
}

/// `G = {E, R, T}` plus the indices every sampler and evaluator needs.
///
/// Immutable after construction. Adjacency and degrees are computed over the
/// train split only; valid and test triples enter the membership index.
#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    entities: Dictionary,
    relations: Dictionary,
    train: Vec<Triple>,
    valid: Vec<Triple>,
    test: Vec<Triple>,
    // CSR incidence: train-triple indices touching each entity, ascending.
    offsets: Vec<usize>,
    incident: Vec<usize>,
    degrees: Vec<usize>,
    active: Vec<EntityId>,
    train_index: HashMap<Triple, usize>,
    known: HashSet<Triple>,
}

impl KnowledgeGraph {
    /// Builds a graph from id-level triples; names default to the decimal ids.
    pub fn new(
        entity_count: usize,
        relation_count: usize,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self, GraphError> {
        Self::with_dictionaries(
            Dictionary::numbered(entity_count),
            Dictionary::numbered(relation_count),
            train,
            valid,
            test,
        )
    }

    /// Graph with only a train split.
    pub fn from_train(
        entity_count: usize,
        relation_count: usize,
        train: Vec<Triple>,
    ) -> Result<Self, GraphError> {
        Self::new(entity_count, relation_count, train, Vec::new(), Vec::new())
    }

    pub fn with_dictionaries(
        entities: Dictionary,
        relations: Dictionary,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self, GraphError> {
        let (ne, nr) = (entities.len(), relations.len());
        for (split, triples) in [("train", &train), ("valid", &valid), ("test", &test)] {
            let mut seen = HashSet::with_capacity(triples.len());
            for t in triples.iter() {
                if t.subject >= ne {
                    return Err(GraphError::EntityOutOfRange {
                        id: t.subject,
                        count: ne,
                    });
                }
                if t.object >= ne {
                    return Err(GraphError::EntityOutOfRange {
                        id: t.object,
                        count: ne,
                    });
                }
                if t.relation >= nr {
                    return Err(GraphError::RelationOutOfRange {
                        id: t.relation,
                        count: nr,
                    });
                }
                if !seen.insert(*t) {
                    return Err(GraphError::DuplicateInSplit(*t, split));
                }
            }
        }

        let mut degrees = vec![0usize; ne];
        let mut incident_len = vec![0usize; ne];
        for t in &train {
            degrees[t.subject] += 1;
            degrees[t.object] += 1;
            incident_len[t.subject] += 1;
            if !t.is_self_loop() {
                incident_len[t.object] += 1;
            }
        }
        let mut offsets = Vec::with_capacity(ne + 1);
        offsets.push(0);
        for len in &incident_len {
            offsets.push(offsets.last().unwrap() + len);
        }
        let mut cursor = offsets[..ne].to_vec();
        let mut incident = vec![0usize; *offsets.last().unwrap()];
        for (i, t) in train.iter().enumerate() {
            incident[cursor[t.subject]] = i;
            cursor[t.subject] += 1;
            if !t.is_self_loop() {
                incident[cursor[t.object]] = i;
                cursor[t.object] += 1;
            }
        }
        let active = (0..ne).filter(|&v| incident_len[v] > 0).collect();
        let train_index = train.iter().enumerate().map(|(i, t)| (*t, i)).collect();
        let known = train.iter().chain(&valid).chain(&test).copied().collect();

        Ok(KnowledgeGraph {
            entities,
            relations,
            train,
            valid,
            test,
            offsets,
            incident,
            degrees,
            active,
            train_index,
            known,
        })
    }

    /// Loads `train.txt`, `valid.txt` and `test.txt` from `dir`.
    ///
    /// Ids are assigned in first-seen order over train, then valid, then test.
    pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Self, GraphError> {
        let dir = dir.as_ref();
        let mut entities = Dictionary::default();
        let mut relations = Dictionary::default();
        let mut splits: Vec<Vec<Triple>> = Vec::with_capacity(3);
        for split in Split::ALL {
            let path = dir.join(split.file_name());
            let io_err = |source| GraphError::Io {
                path: path.clone(),
                source,
            };
            let reader = BufReader::new(File::open(&path).map_err(io_err)?);
            let mut triples = Vec::new();
            let mut seen = HashSet::new();
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(io_err)?;
                let line = line.trim_end_matches('\r');
                if line.is_empty() {
                    continue;
                }
                let cols: Vec<&str> = line.split('\t').collect();
                if cols.len() != 3 {
                    return Err(GraphError::Malformed {
                        path: path.clone(),
                        line: i + 1,
                        found: cols.len(),
                    });
                }
                let t = Triple::new(
                    entities.intern(cols[0]),
                    relations.intern(cols[1]),
                    entities.intern(cols[2]),
                );
                if !seen.insert(t) {
                    return Err(GraphError::DuplicateTriple {
                        path: path.clone(),
                        line: i + 1,
                    });
                }
                triples.push(t);
            }
            splits.push(triples);
        }
        let test = splits.pop().unwrap();
        let valid = splits.pop().unwrap();
        let train = splits.pop().unwrap();
        Self::with_dictionaries(entities, relations, train, valid, test)
    }

    /// Writes the three split files plus `entities.tsv` / `relations.tsv`.
    pub fn write_dataset(&self, dir: impl AsRef<Path>) -> Result<(), GraphError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|source| GraphError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        for split in Split::ALL {
            let path = dir.join(split.file_name());
            let io_err = |source| GraphError::Io {
                path: path.clone(),
                source,
            };
            let mut out = BufWriter::new(File::create(&path).map_err(io_err)?);
            for t in self.split(split) {
                writeln!(
                    out,
                    "{}\t{}\t{}",
                    self.entities.names[t.subject],
                    self.relations.names[t.relation],
                    self.entities.names[t.object]
                )
                .map_err(io_err)?;
            }
            out.flush().map_err(io_err)?;
        }
        self.write_dictionaries(dir)
    }

    pub fn write_dictionaries(&self, dir: impl AsRef<Path>) -> Result<(), GraphError> {
        let dir = dir.as_ref();
        self.entities.write_tsv(&dir.join("entities.tsv"))?;
        self.relations.write_tsv(&dir.join("relations.tsv"))
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn entities(&self) -> &Dictionary {
        &self.entities
    }

    pub fn relations(&self) -> &Dictionary {
        &self.relations
    }

    pub fn train(&self) -> &[Triple] {
        &self.train
    }

    pub fn valid(&self) -> &[Triple] {
        &self.valid
    }

    pub fn test(&self) -> &[Triple] {
        &self.test
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// Train-triple indices incident to `v` (self-loops listed once).
    pub fn incident(&self, v: EntityId) -> &[usize] {
        &self.incident[self.offsets[v]..self.offsets[v + 1]]
    }

    /// Total (in + out) degree over the train split; a self-loop counts twice.
    pub fn degree(&self, v: EntityId) -> Result<usize, GraphError> {
        self.degrees
            .get(v)
            .copied()
            .ok_or(GraphError::EntityOutOfRange {
                id: v,
                count: self.entity_count(),
            })
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    /// Entities with at least one incident train triple.
    pub fn active_entities(&self) -> &[EntityId] {
        &self.active
    }

    pub fn train_triple(&self, index: usize) -> Triple {
        self.train[index]
    }

    pub fn train_index_of(&self, t: &Triple) -> Option<usize> {
        self.train_index.get(t).copied()
    }

    /// Membership in train ∪ valid ∪ test.
    pub fn is_known(&self, t: &Triple) -> bool {
        self.known.contains(t)
    }

    /// Train triples sharing an endpoint with `t`, excluding `t`.
    pub fn neighbor_triples(&self, t: &Triple) -> Result<Vec<Triple>, GraphError> {
        let index = self
            .train_index_of(t)
            .ok_or(GraphError::NotATrainTriple(*t))?;
        Ok(self
            .neighbor_indices(index)
            .into_iter()
            .map(|i| self.train[i])
            .collect())
    }

    /// Index form of [`KnowledgeGraph::neighbor_triples`], ascending.
    pub fn neighbor_indices(&self, index: usize) -> Vec<usize> {
        let t = self.train[index];
        let mut out = merge_sorted(self.incident(t.subject), self.incident(t.object));
        out.retain(|&i| i != index);
        out
    }

    /// Train triples with both endpoints in `vertices`.
    pub fn induced_subgraph(&self, vertices: &[EntityId]) -> Vec<Triple> {
        self.induced_indices(vertices)
            .into_iter()
            .map(|i| self.train[i])
            .collect()
    }

    /// Index form of [`KnowledgeGraph::induced_subgraph`], ascending.
    pub fn induced_indices(&self, vertices: &[EntityId]) -> Vec<usize> {
        let mut member = vec![false; self.entity_count()];
        for &v in vertices {
            member[v] = true;
        }
        let mut out = Vec::new();
        for (v, _) in member.iter().enumerate().filter(|(_, &m)| m) {
            for &i in self.incident(v) {
                let t = self.train[i];
                // Emit each triple from its subject side only.
                if t.subject == v && member[t.object] {
                    out.push(i);
                }
            }
        }
        out.sort_unstable();
        out
    }

    pub fn summary(&self) -> GraphSummary {
        let n = self.entity_count();
        let mut sorted = self.degrees.clone();
        sorted.sort_unstable();
        let median = match n {
            0 => 0.0,
            n if n % 2 == 1 => sorted[n / 2] as f64,
            n => (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0,
        };
        let mean = if n == 0 {
            0.0
        } else {
            self.degrees.iter().sum::<usize>() as f64 / n as f64
        };
        let valid: HashSet<&Triple> = self.valid.iter().collect();
        let test: HashSet<&Triple> = self.test.iter().collect();
        let cross_split_duplicates = self
            .train
            .iter()
            .chain(&self.valid)
            .chain(&self.test)
            .copied()
            .collect::<HashSet<_>>()
            .iter()
            .filter(|t| {
                let hits = self.train_index.contains_key(t) as usize
                    + valid.contains(t) as usize
                    + test.contains(t) as usize;
                hits > 1
            })
            .count();
        GraphSummary {
            entities: n,
            relations: self.relation_count(),
            train: self.train.len(),
            valid: self.valid.len(),
            test: self.test.len(),
            mean_degree: mean,
            median_degree: median,
            max_degree: sorted.last().copied().unwrap_or(0),
            isolated_entities: n - self.active.len(),
            self_loops: self.train.iter().filter(|t| t.is_self_loop()).count(),
            cross_split_duplicates,
        }
    }
}

fn merge_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> KnowledgeGraph {
        // a=0, b=1, c=2, d=3
        KnowledgeGraph::from_train(
            4,
            1,
            vec![
                Triple::new(0, 0, 1),
                Triple::new(1, 0, 2),
                Triple::new(2, 0, 3),
            ],
        )
        .unwrap()
    }

    #[test]
    fn chain_degree_and_neighbors() {
        let g = chain();
        assert_eq!(g.degree(1).unwrap(), 2);
        assert_eq!(g.degree(0).unwrap(), 1);
        let n = g.neighbor_triples(&Triple::new(1, 0, 2)).unwrap();
        assert_eq!(n, vec![Triple::new(0, 0, 1), Triple::new(2, 0, 3)]);
        assert!(g.degree(4).is_err());
    }

    #[test]
    fn isolated_entity_has_zero_degree() {
        let g = KnowledgeGraph::from_train(3, 1, vec![Triple::new(0, 0, 1)]).unwrap();
        assert_eq!(g.degree(2).unwrap(), 0);
        assert!(g.incident(2).is_empty());
        assert_eq!(g.active_entities(), &[0, 1]);
    }

    #[test]
    fn single_triple_has_no_neighbors() {
        let g = KnowledgeGraph::from_train(2, 1, vec![Triple::new(0, 0, 1)]).unwrap();
        assert!(g
            .neighbor_triples(&Triple::new(0, 0, 1))
            .unwrap()
            .is_empty());
        assert!(matches!(
            g.neighbor_triples(&Triple::new(1, 0, 0)),
            Err(GraphError::NotATrainTriple(_))
        ));
    }

    #[test]
    fn star_spoke_neighbors_are_other_spokes() {
        let spokes: Vec<Triple> = (1..=5).map(|i| Triple::new(0, 0, i)).collect();
        let g = KnowledgeGraph::from_train(6, 1, spokes.clone()).unwrap();
        let n = g.neighbor_triples(&spokes[2]).unwrap();
        let expect: Vec<Triple> = spokes.iter().copied().filter(|t| *t != spokes[2]).collect();
        assert_eq!(n, expect);
    }

    #[test]
    fn self_loop_counts_twice_listed_once() {
        let g = KnowledgeGraph::from_train(2, 1, vec![Triple::new(0, 0, 0), Triple::new(0, 0, 1)])
            .unwrap();
        assert_eq!(g.degree(0).unwrap(), 3);
        assert_eq!(g.incident(0), &[0, 1]);
        assert_eq!(g.summary().self_loops, 1);
    }

    #[test]
    fn triangle_induced_subgraph() {
        let g = KnowledgeGraph::from_train(
            3,
            1,
            vec![
                Triple::new(0, 0, 1),
                Triple::new(1, 0, 2),
                Triple::new(2, 0, 0),
            ],
        )
        .unwrap();
        assert_eq!(g.induced_subgraph(&[0, 1]), vec![Triple::new(0, 0, 1)]);
        assert!(g.induced_subgraph(&[]).is_empty());
        assert_eq!(g.induced_subgraph(&[0, 1, 2]), g.train().to_vec());
    }

    #[test]
    fn duplicate_within_split_rejected_across_splits_allowed() {
        let t = Triple::new(0, 0, 1);
        assert!(matches!(
            KnowledgeGraph::from_train(2, 1, vec![t, t]),
            Err(GraphError::DuplicateInSplit(_, "train"))
        ));
        let g = KnowledgeGraph::new(2, 1, vec![t], vec![t], vec![]).unwrap();
        assert_eq!(g.summary().cross_split_duplicates, 1);
        assert!(g.is_known(&t));
    }

    #[test]
    fn out_of_range_ids_rejected() {
        assert!(KnowledgeGraph::from_train(2, 1, vec![Triple::new(0, 0, 2)]).is_err());
        assert!(KnowledgeGraph::from_train(2, 1, vec![Triple::new(0, 1, 1)]).is_err());
    }

    #[test]
    fn summary_mean_and_median() {
        let s = chain().summary();
        assert_eq!(s.mean_degree, 1.5);
        assert_eq!(s.median_degree, 1.5);
        assert_eq!(s.max_degree, 2);
    }
}
