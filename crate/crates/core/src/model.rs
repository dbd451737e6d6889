//! Embedding storage and the four score functions with analytic gradients.
//!
//! Every model scores a triple as `combine(query(e_s, w_r), e_o)`. The query
//! depends only on subject and relation, which lets
//! [`EmbeddingStore::score_against_all_objects`] reuse it across candidates
//! and still agree bit for bit with [`EmbeddingStore::score`].
//!
//! Complex-valued rows (ComplEx entities and relations, RotatE entities) are
//! stored as `[re_0 .. re_{K-1}, im_0 .. im_{K-1}]`. RotatE relation rows hold
//! `K` phase angles, so the effective coefficient `cos θ + i sin θ` has unit
//! modulus whatever the stored value.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::graph::{EntityId, RelationId, Triple};
use crate::scalar::Scalar;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    TransE,
    DistMult,
    ComplEx,
    RotatE,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::TransE,
        ModelKind::DistMult,
        ModelKind::ComplEx,
        ModelKind::RotatE,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::TransE => "transe",
            ModelKind::DistMult => "distmult",
            ModelKind::ComplEx => "complex",
            ModelKind::RotatE => "rotate",
        }
    }

    fn tag(self) -> u32 {
        match self {
            ModelKind::TransE => 0,
            ModelKind::DistMult => 1,
            ModelKind::ComplEx => 2,
            ModelKind::RotatE => 3,
        }
    }

    fn from_tag(tag: u32) -> Result<Self, ModelError> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.tag() == tag)
            .ok_or(ModelError::UnknownModelTag(tag))
    }

    /// Real values per entity row for dimension `k`.
    pub fn entity_width(self, k: usize) -> usize {
        match self {
            ModelKind::TransE | ModelKind::DistMult => k,
            ModelKind::ComplEx | ModelKind::RotatE => 2 * k,
        }
    }

    pub fn relation_width(self, k: usize) -> usize {
        match self {
            ModelKind::TransE | ModelKind::DistMult | ModelKind::RotatE => k,
            ModelKind::ComplEx => 2 * k,
        }
    }

    /// Distance-based models score `<= 0`.
    pub fn is_distance(self) -> bool {
        matches!(self, ModelKind::TransE | ModelKind::RotatE)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "transe" => Ok(ModelKind::TransE),
            "distmult" => Ok(ModelKind::DistMult),
            "complex" => Ok(ModelKind::ComplEx),
            "rotate" => Ok(ModelKind::RotatE),
            _ => Err(format!(
                "unknown model `{s}` (valid: transe, distmult, complex, rotate)"
            )),
        }
    }
}

/// `∂φ/∂` each participating row.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreGradient<T> {
    pub d_subject: Vec<T>,
    pub d_relation: Vec<T>,
    pub d_object: Vec<T>,
}

/// Entity and relation matrices, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore<T> {
    model: ModelKind,
    dim: usize,
    entity_count: usize,
    relation_count: usize,
    entities: Vec<T>,
    relations: Vec<T>,
}

impl<T: Scalar> EmbeddingStore<T> {
    pub fn zeros(
        entity_count: usize,
        relation_count: usize,
        model: ModelKind,
        dim: usize,
    ) -> Result<Self, ModelError> {
        if dim == 0 {
            return Err(ModelError::InvalidDimension(dim));
        }
        Ok(EmbeddingStore {
            model,
            dim,
            entity_count,
            relation_count,
            entities: vec![T::zero(); entity_count * model.entity_width(dim)],
            relations: vec![T::zero(); relation_count * model.relation_width(dim)],
        })
    }

    /// Uniform entries on `[-6/√K, 6/√K]`; RotatE phases uniform on `[-π, π]`.
    pub fn initialize(
        entity_count: usize,
        relation_count: usize,
        model: ModelKind,
        dim: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let mut store = Self::zeros(entity_count, relation_count, model, dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 6.0 / (dim as f64).sqrt();
        for x in store.entities.iter_mut() {
            *x = T::lit(rng.gen_range(-bound..=bound));
        }
        let rel_bound = if model == ModelKind::RotatE {
            std::f64::consts::PI
        } else {
            bound
        };
        for x in store.relations.iter_mut() {
            *x = T::lit(rng.gen_range(-rel_bound..=rel_bound));
        }
        Ok(store)
    }

    pub fn model(&self) -> ModelKind {
        self.model
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entity_count(&self) -> usize {
        self.entity_count
    }

    pub fn relation_count(&self) -> usize {
        self.relation_count
    }

    pub fn entity_width(&self) -> usize {
        self.model.entity_width(self.dim)
    }

    pub fn relation_width(&self) -> usize {
        self.model.relation_width(self.dim)
    }

    pub fn entity_values(&self) -> &[T] {
        &self.entities
    }

    pub fn relation_values(&self) -> &[T] {
        &self.relations
    }

    pub fn entity(&self, id: EntityId) -> &[T] {
        let w = self.entity_width();
        &self.entities[id * w..(id + 1) * w]
    }

    pub fn entity_mut(&mut self, id: EntityId) -> &mut [T] {
        let w = self.entity_width();
        &mut self.entities[id * w..(id + 1) * w]
    }

    pub fn relation(&self, id: RelationId) -> &[T] {
        let w = self.relation_width();
        &self.relations[id * w..(id + 1) * w]
    }

    pub fn relation_mut(&mut self, id: RelationId) -> &mut [T] {
        let w = self.relation_width();
        &mut self.relations[id * w..(id + 1) * w]
    }

    /// The complex relation coefficient as `[re.., im..]` (RotatE: `cos θ`,
    /// `sin θ`); other models return the stored row.
    pub fn effective_relation(&self, id: RelationId) -> Vec<T> {
        let row = self.relation(id);
        match self.model {
            ModelKind::RotatE => row
                .iter()
                .map(|p| p.cos())
                .chain(row.iter().map(|p| p.sin()))
                .collect(),
            _ => row.to_vec(),
        }
    }

    fn check_entity(&self, id: EntityId) -> Result<(), ModelError> {
        if id < self.entity_count {
            Ok(())
        } else {
            Err(ModelError::EntityOutOfRange {
                id,
                count: self.entity_count,
            })
        }
    }

    fn check_relation(&self, id: RelationId) -> Result<(), ModelError> {
        if id < self.relation_count {
            Ok(())
        } else {
            Err(ModelError::RelationOutOfRange {
                id,
                count: self.relation_count,
            })
        }
    }

    pub fn check_triple(&self, t: &Triple) -> Result<(), ModelError> {
        self.check_entity(t.subject)?;
        self.check_relation(t.relation)?;
        self.check_entity(t.object)
    }

    /// The subject-relation part of the score.
    fn query(&self, s: EntityId, r: RelationId) -> Vec<T> {
        let es = self.entity(s);
        let wr = self.relation(r);
        let k = self.dim;
        match self.model {
            ModelKind::TransE => es.iter().zip(wr).map(|(&a, &b)| a + b).collect(),
            ModelKind::DistMult => es.iter().zip(wr).map(|(&a, &b)| a * b).collect(),
            ModelKind::ComplEx => {
                let (a, b) = es.split_at(k);
                let (c, d) = wr.split_at(k);
                let mut q = Vec::with_capacity(2 * k);
                q.extend((0..k).map(|i| c[i] * a[i] - d[i] * b[i]));
                q.extend((0..k).map(|i| c[i] * b[i] + d[i] * a[i]));
                q
            }
            ModelKind::RotatE => {
                let (a, b) = es.split_at(k);
                let mut q = vec![T::zero(); 2 * k];
                for i in 0..k {
                    let (sin, cos) = wr[i].sin_cos();
                    q[i] = a[i] * cos - b[i] * sin;
                    q[k + i] = a[i] * sin + b[i] * cos;
                }
                q
            }
        }
    }

    fn combine(&self, q: &[T], eo: &[T]) -> T {
        if self.model.is_distance() {
            -q.iter()
                .zip(eo)
                .map(|(&x, &y)| (x - y) * (x - y))
                .sum::<T>()
                .sqrt()
        } else {
            // DistMult: Σ q·o. ComplEx: Re(q · conj(o)) is the same real dot
            // product over the split layout.
            q.iter().zip(eo).map(|(&x, &y)| x * y).sum()
        }
    }

    /// `φ(s, r, o)`; higher is more plausible.
    pub fn score(&self, t: &Triple) -> Result<T, ModelError> {
        self.check_triple(t)?;
        Ok(self.combine(&self.query(t.subject, t.relation), self.entity(t.object)))
    }

    pub fn score_gradient(&self, t: &Triple) -> Result<ScoreGradient<T>, ModelError> {
        self.score_with_gradient(t).map(|(_, g)| g)
    }

    /// Score and its gradient in one pass. At the non-differentiable point of
    /// the distance models (exact match) the gradient is zero.
    pub fn score_with_gradient(&self, t: &Triple) -> Result<(T, ScoreGradient<T>), ModelError> {
        self.check_triple(t)?;
        let es = self.entity(t.subject);
        let wr = self.relation(t.relation);
        let eo = self.entity(t.object);
        let q = self.query(t.subject, t.relation);
        let phi = self.combine(&q, eo);
        let k = self.dim;
        let grad = match self.model {
            ModelKind::TransE => {
                let norm = -phi;
                let u: Vec<T> = if norm > T::zero() {
                    q.iter().zip(eo).map(|(&x, &y)| (x - y) / norm).collect()
                } else {
                    vec![T::zero(); k]
                };
                ScoreGradient {
                    d_subject: u.iter().map(|&x| -x).collect(),
                    d_relation: u.iter().map(|&x| -x).collect(),
                    d_object: u,
                }
            }
            ModelKind::DistMult => ScoreGradient {
                d_subject: wr.iter().zip(eo).map(|(&r, &o)| r * o).collect(),
                d_relation: es.iter().zip(eo).map(|(&s, &o)| s * o).collect(),
                d_object: q,
            },
            ModelKind::ComplEx => {
                let (a, b) = es.split_at(k);
                let (c, d) = wr.split_at(k);
                let (e, f) = eo.split_at(k);
                let mut ds = vec![T::zero(); 2 * k];
                let mut dr = vec![T::zero(); 2 * k];
                for i in 0..k {
                    ds[i] = c[i] * e[i] + d[i] * f[i];
                    ds[k + i] = c[i] * f[i] - d[i] * e[i];
                    dr[i] = a[i] * e[i] + b[i] * f[i];
                    dr[k + i] = a[i] * f[i] - b[i] * e[i];
                }
                ScoreGradient {
                    d_subject: ds,
                    d_relation: dr,
                    d_object: q,
                }
            }
            ModelKind::RotatE => {
                let norm = -phi;
                let mut ds = vec![T::zero(); 2 * k];
                let mut dr = vec![T::zero(); k];
                let mut d_o = vec![T::zero(); 2 * k];
                if norm > T::zero() {
                    for i in 0..k {
                        let (sin, cos) = wr[i].sin_cos();
                        let u_re = (q[i] - eo[i]) / norm;
                        let u_im = (q[k + i] - eo[k + i]) / norm;
                        // ∂φ/∂q = -u
                        ds[i] = -(u_re * cos + u_im * sin);
                        ds[k + i] = -(u_im * cos - u_re * sin);
                        dr[i] = u_re * q[k + i] - u_im * q[i];
                        d_o[i] = u_re;
                        d_o[k + i] = u_im;
                    }
                }
                ScoreGradient {
                    d_subject: ds,
                    d_relation: dr,
                    d_object: d_o,
                }
            }
        };
        Ok((phi, grad))
    }

    /// `φ(s, r, o)` for every entity `o`, sharing the subject-relation query.
    pub fn score_against_all_objects(
        &self,
        s: EntityId,
        r: RelationId,
    ) -> Result<Vec<T>, ModelError> {
        self.check_entity(s)?;
        self.check_relation(r)?;
        let q = self.query(s, r);
        Ok((0..self.entity_count)
            .map(|o| self.combine(&q, self.entity(o)))
            .collect())
    }

    /// `φ(s, r, o)` for every entity `s`.
    pub fn score_against_all_subjects(
        &self,
        r: RelationId,
        o: EntityId,
    ) -> Result<Vec<T>, ModelError> {
        self.check_relation(r)?;
        self.check_entity(o)?;
        let eo = self.entity(o);
        Ok((0..self.entity_count)
            .map(|s| self.combine(&self.query(s, r), eo))
            .collect())
    }

    pub fn is_finite(&self) -> bool {
        self.entities
            .iter()
            .chain(&self.relations)
            .all(|x| x.is_finite())
    }

    /// Converts to another scalar type.
    pub fn cast<U: Scalar>(&self) -> EmbeddingStore<U> {
        let conv = |v: &[T]| v.iter().map(|&x| U::lit(x.as_f64())).collect();
        EmbeddingStore {
            model: self.model,
            dim: self.dim,
            entity_count: self.entity_count,
            relation_count: self.relation_count,
            entities: conv(&self.entities),
            relations: conv(&self.relations),
        }
    }

    /// Binary checkpoint: 8-byte magic, model tag (`u32`), `|E|`, `|R|`, `K`
    /// (`u64` each), then the entity and relation matrices as row-major
    /// little-endian `f64`.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<(), ModelError> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&self.model.tag().to_le_bytes())?;
        for n in [self.entity_count, self.relation_count, self.dim] {
            out.write_all(&(n as u64).to_le_bytes())?;
        }
        for x in self.entities.iter().chain(&self.relations) {
            out.write_all(&x.as_f64().to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Self, ModelError> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(ModelError::BadMagic);
        }
        let mut tag = [0u8; 4];
        input.read_exact(&mut tag)?;
        let model = ModelKind::from_tag(u32::from_le_bytes(tag))?;
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            let mut buf = [0u8; 8];
            input.read_exact(&mut buf)?;
            *d = u64::from_le_bytes(buf) as usize;
        }
        let [entity_count, relation_count, dim] = dims;
        let mut store = Self::zeros(entity_count, relation_count, model, dim)?;
        let expected = store.entities.len() + store.relations.len();
        let mut bytes = Vec::with_capacity(expected * 8);
        input.read_to_end(&mut bytes)?;
        if bytes.len() != expected * 8 {
            return Err(ModelError::Truncated {
                expected,
                found: bytes.len() / 8,
            });
        }
        let mut values = bytes
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())));
        for x in store.entities.iter_mut().chain(store.relations.iter_mut()) {
            *x = values.next().unwrap();
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        self.write_checkpoint(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::read_checkpoint(BufReader::new(File::open(path)?))
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"KGCEMB01";
