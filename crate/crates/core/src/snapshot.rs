//! Versioned binary model snapshots.
//!
//! Layout (little endian): 8-byte magic, `u32` format version, scalar tag,
//! model kind, JSON metadata, then named sections of named arrays. Strings
//! are `u32` length + UTF-8; an array is its name, `u8` rank, `u64` dims and
//! the raw scalars. Scalars are written with their exact bit patterns.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde_json::{json, Value};

use crate::model::{DnnConfig, DnnModel};
use crate::nn::{Affine, DenseParams, EmbeddingParams, Mlp, MlpParams, Moments};
use crate::star::{AuxNetParams, PnParams, StarConfig, StarFcnParams, StarModel, StarParams};
use crate::{Error, Result, Scalar};

const MAGIC: &[u8; 8] = b"DFSNAP\r\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section<T> {
    pub name: String,
    pub arrays: Vec<NamedArray<T>>,
}

impl<T: Scalar> Section<T> {
    pub fn new(name: impl Into<String>) -> Self {
        Section {
            name: name.into(),
            arrays: Vec::new(),
        }
    }

    pub fn push1(&mut self, name: impl Into<String>, a: &Array1<T>) {
        self.arrays.push(NamedArray {
            name: name.into(),
            shape: vec![a.len()],
            data: a.to_vec(),
        });
    }

    pub fn push2(&mut self, name: impl Into<String>, a: &Array2<T>) {
        self.arrays.push(NamedArray {
            name: name.into(),
            shape: vec![a.nrows(), a.ncols()],
            data: a.iter().copied().collect(),
        });
    }

    fn find(&self, name: &str) -> Result<&NamedArray<T>> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Snapshot(format!("section '{}' lacks array '{name}'", self.name)))
    }

    pub fn get1(&self, name: &str) -> Result<Array1<T>> {
        let a = self.find(name)?;
        if a.shape.len() != 1 {
            return Err(Error::Snapshot(format!("array '{name}' is not a vector")));
        }
        Ok(Array1::from(a.data.clone()))
    }

    pub fn get2(&self, name: &str) -> Result<Array2<T>> {
        let a = self.find(name)?;
        if a.shape.len() != 2 {
            return Err(Error::Snapshot(format!("array '{name}' is not a matrix")));
        }
        Array2::from_shape_vec((a.shape[0], a.shape[1]), a.data.clone())
            .map_err(|e| Error::Snapshot(e.to_string()))
    }

    fn push_dense(&mut self, prefix: &str, d: &DenseParams<T>) {
        self.push2(format!("{prefix}.weight"), &d.weight);
        self.push1(format!("{prefix}.bias"), &d.bias);
    }

    fn get_dense(&self, prefix: &str) -> Result<DenseParams<T>> {
        Ok(DenseParams {
            weight: self.get2(&format!("{prefix}.weight"))?,
            bias: self.get1(&format!("{prefix}.bias"))?,
        })
    }

    fn push_affine(&mut self, prefix: &str, a: &Affine<T>) {
        self.push1(format!("{prefix}.gamma"), &a.gamma);
        self.push1(format!("{prefix}.beta"), &a.beta);
    }

    fn get_affine(&self, prefix: &str) -> Result<Affine<T>> {
        Ok(Affine {
            gamma: self.get1(&format!("{prefix}.gamma"))?,
            beta: self.get1(&format!("{prefix}.beta"))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<T> {
    pub kind: String,
    pub metadata: Value,
    pub sections: Vec<Section<T>>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Snapshot("truncated snapshot".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Snapshot("invalid UTF-8".into()))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl<T: Scalar> Snapshot<T> {
    pub fn new(kind: impl Into<String>, metadata: Value) -> Self {
        Snapshot {
            kind: kind.into(),
            metadata,
            sections: Vec::new(),
        }
    }

    pub fn section(&self, name: &str) -> Result<&Section<T>> {
        self.sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Snapshot(format!("missing section '{name}'")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_str(&mut out, T::TAG);
        put_str(&mut out, &self.kind);
        put_str(&mut out, &self.metadata.to_string());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for s in &self.sections {
            put_str(&mut out, &s.name);
            out.extend_from_slice(&(s.arrays.len() as u32).to_le_bytes());
            for a in &s.arrays {
                put_str(&mut out, &a.name);
                out.push(a.shape.len() as u8);
                for &d in &a.shape {
                    out.extend_from_slice(&(d as u64).to_le_bytes());
                }
                for &v in &a.data {
                    v.write_le(&mut out);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Snapshot("not a model snapshot".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Snapshot(format!("unsupported snapshot version {version}")));
        }
        let tag = r.string()?;
        if tag != T::TAG {
            return Err(Error::Snapshot(format!("snapshot holds {tag}, expected {}", T::TAG)));
        }
        let kind = r.string()?;
        let metadata = serde_json::from_str(&r.string()?).map_err(|e| Error::Snapshot(e.to_string()))?;
        let mut sections = Vec::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let mut arrays = Vec::new();
            for _ in 0..r.u32()? {
                let aname = r.string()?;
                let rank = r.u8()? as usize;
                let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
                let len = shape
                    .iter()
                    .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                    .ok_or_else(|| Error::Snapshot("array size overflow".into()))?;
                let raw = r.take(len.checked_mul(T::BYTES).ok_or_else(|| Error::Snapshot("array size overflow".into()))?)?;
                let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
                arrays.push(NamedArray { name: aname, shape, data });
            }
            sections.push(Section { name, arrays });
        }
        if r.pos != bytes.len() {
            return Err(Error::Snapshot("trailing bytes after snapshot".into()));
        }
        Ok(Snapshot { kind, metadata, sections })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn meta_field<D: serde::de::DeserializeOwned>(meta: &Value, key: &str) -> Result<D> {
    let v = meta.get(key).ok_or_else(|| Error::Snapshot(format!("metadata lacks '{key}'")))?;
    serde_json::from_value(v.clone()).map_err(|e| Error::Snapshot(format!("metadata '{key}': {e}")))
}

fn embedding_section<T: Scalar>(e: &EmbeddingParams<T>) -> Section<T> {
    let mut s = Section::new("embeddings");
    for (i, t) in e.tables.iter().enumerate() {
        s.push2(format!("field{i}"), t);
    }
    s
}

fn read_embedding<T: Scalar>(s: &Section<T>, fields: usize) -> Result<EmbeddingParams<T>> {
    Ok(EmbeddingParams {
        tables: (0..fields).map(|i| s.get2(&format!("field{i}"))).collect::<Result<_>>()?,
    })
}

fn push_moments<T: Scalar>(s: &mut Section<T>, prefix: &str, m: &Moments<T>) {
    s.push1(format!("{prefix}.mean"), &m.mean);
    s.push1(format!("{prefix}.var"), &m.var);
}

fn read_moments<T: Scalar>(s: &Section<T>, prefix: &str, updates: u64) -> Result<Moments<T>> {
    Ok(Moments {
        mean: s.get1(&format!("{prefix}.mean"))?,
        var: s.get1(&format!("{prefix}.var"))?,
        updates,
    })
}

impl<T: Scalar> DnnModel<T> {
    /// Snapshot parameters and moving moments; `extra` is stored alongside
    /// the config in the metadata.
    pub fn to_snapshot(&self, extra: Value) -> Snapshot<T> {
        let updates: Vec<u64> = self.mlp.moments.iter().map(|m| m.updates).collect();
        let mut snap = Snapshot::new(
            "dnn",
            json!({ "config": self.config(), "moment_updates": updates, "extra": extra }),
        );
        snap.sections.push(embedding_section(&self.embedding));
        let mut mlp = Section::new("mlp");
        for (i, d) in self.mlp.params.dense.iter().enumerate() {
            mlp.push_dense(&format!("dense{i}"), d);
        }
        for (i, a) in self.mlp.params.norm.iter().enumerate() {
            mlp.push_affine(&format!("norm{i}"), a);
        }
        snap.sections.push(mlp);
        let mut mom = Section::new("moments");
        for (i, m) in self.mlp.moments.iter().enumerate() {
            push_moments(&mut mom, &format!("norm{i}"), m);
        }
        snap.sections.push(mom);
        snap
    }

    pub fn from_snapshot(snap: &Snapshot<T>) -> Result<Self> {
        if snap.kind != "dnn" {
            return Err(Error::Snapshot(format!("expected a dnn snapshot, found '{}'", snap.kind)));
        }
        let config: DnnConfig = meta_field(&snap.metadata, "config")?;
        let updates: Vec<u64> = meta_field(&snap.metadata, "moment_updates")?;
        let embedding = read_embedding(snap.section("embeddings")?, config.vocab_sizes.len())?;
        let mlp_s = snap.section("mlp")?;
        let mlp_cfg = config.mlp_config();
        let params = MlpParams {
            dense: (0..mlp_cfg.num_layers())
                .map(|i| mlp_s.get_dense(&format!("dense{i}")))
                .collect::<Result<_>>()?,
            norm: (0..updates.len())
                .map(|i| mlp_s.get_affine(&format!("norm{i}")))
                .collect::<Result<_>>()?,
        };
        let mom_s = snap.section("moments")?;
        let moments = updates
            .iter()
            .enumerate()
            .map(|(i, &u)| read_moments(mom_s, &format!("norm{i}"), u))
            .collect::<Result<Vec<_>>>()?;
        let mut mlp = Mlp::from_params(mlp_cfg, params).map_err(|e| Error::Snapshot(e.to_string()))?;
        mlp.moments = moments;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut model = DnnModel::new(config, &mut rng).map_err(|e| Error::Snapshot(e.to_string()))?;
        model.embedding = embedding;
        model.mlp = mlp;
        Ok(model)
    }
}

impl<T: Scalar> StarModel<T> {
    pub fn to_snapshot(&self, extra: Value) -> Snapshot<T> {
        let updates: Vec<u64> = self.moments.iter().map(|m| m.updates).collect();
        let mut snap = Snapshot::new(
            "star",
            json!({ "config": self.config(), "moment_updates": updates, "extra": extra }),
        );
        snap.sections.push(embedding_section(&self.params.embedding));
        let mut shared = Section::new("shared_fcn");
        for (l, d) in self.params.fcn.shared.iter().enumerate() {
            shared.push_dense(&format!("layer{l}"), d);
        }
        snap.sections.push(shared);
        let mut domain = Section::new("domain_fcn");
        for (p, layers) in self.params.fcn.domains.iter().enumerate() {
            for (l, d) in layers.iter().enumerate() {
                domain.push_dense(&format!("domain{p}.layer{l}"), d);
            }
        }
        snap.sections.push(domain);
        let mut pn = Section::new("pn");
        pn.push_affine("shared", &self.params.pn.shared);
        for (p, a) in self.params.pn.domains.iter().enumerate() {
            pn.push_affine(&format!("domain{p}"), a);
            push_moments(&mut pn, &format!("domain{p}.moments"), &self.moments[p]);
        }
        snap.sections.push(pn);
        if let Some(a) = &self.params.aux {
            let mut aux = Section::new("aux");
            aux.push2("domain_embedding", &a.domain_embedding);
            aux.push_dense("hidden", &a.hidden);
            aux.push_dense("output", &a.output);
            snap.sections.push(aux);
        }
        snap
    }

    pub fn from_snapshot(snap: &Snapshot<T>) -> Result<Self> {
        if snap.kind != "star" {
            return Err(Error::Snapshot(format!("expected a star snapshot, found '{}'", snap.kind)));
        }
        let config: StarConfig = meta_field(&snap.metadata, "config")?;
        let updates: Vec<u64> = meta_field(&snap.metadata, "moment_updates")?;
        if updates.len() != config.num_domains {
            return Err(Error::Snapshot("moment count does not match domain count".into()));
        }
        let layers = config.hidden.len() + 1;
        let shared_s = snap.section("shared_fcn")?;
        let domain_s = snap.section("domain_fcn")?;
        let fcn = StarFcnParams {
            shared: (0..layers).map(|l| shared_s.get_dense(&format!("layer{l}"))).collect::<Result<_>>()?,
            domains: (0..config.num_domains)
                .map(|p| (0..layers).map(|l| domain_s.get_dense(&format!("domain{p}.layer{l}"))).collect())
                .collect::<Result<_>>()?,
        };
        let pn_s = snap.section("pn")?;
        let pn = PnParams {
            shared: pn_s.get_affine("shared")?,
            domains: (0..config.num_domains)
                .map(|p| pn_s.get_affine(&format!("domain{p}")))
                .collect::<Result<_>>()?,
        };
        let aux = if config.use_aux {
            let s = snap.section("aux")?;
            Some(AuxNetParams {
                domain_embedding: s.get2("domain_embedding")?,
                hidden: s.get_dense("hidden")?,
                output: s.get_dense("output")?,
            })
        } else {
            None
        };
        let params = StarParams {
            embedding: read_embedding(snap.section("embeddings")?, config.vocab_sizes.len())?,
            pn,
            fcn,
            aux,
        };
        let moments = updates
            .iter()
            .enumerate()
            .map(|(p, &u)| read_moments(pn_s, &format!("domain{p}.moments"), u))
            .collect::<Result<Vec<_>>>()?;
        let mut model = StarModel::from_params(config, params).map_err(|e| Error::Snapshot(e.to_string()))?;
        model.moments = moments;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FeatureBatch;
    use crate::stream::DomainId;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dnn_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut model = DnnModel::<f32>::new(DnnConfig::new(vec![4, 3], 2, vec![5]), &mut rng).unwrap();
        model.forward(array![[0u32, 1], [3, 2]].view()).unwrap();
        let bytes = model.to_snapshot(json!({"loss": "fnc"})).to_bytes();
        let snap = Snapshot::<f32>::from_bytes(&bytes).unwrap();
        assert_eq!(snap.metadata["extra"]["loss"], "fnc");
        let back = DnnModel::from_snapshot(&snap).unwrap();
        assert_eq!(back.params(), model.params());
        assert_eq!(back.mlp.moments, model.mlp.moments);
        assert_eq!(back.to_snapshot(json!({"loss": "fnc"})).to_bytes(), bytes);
    }

    #[test]
    fn star_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut model = StarModel::<f64>::new(StarConfig::new(vec![4, 3], 2, vec![5], 2), &mut rng).unwrap();
        let d = DomainId::new(2, 2).unwrap();
        let b = FeatureBatch::new(array![[0u32, 1], [3, 2]], vec![d, d]).unwrap();
        model.forward_train(&b).unwrap();
        let bytes = model.to_snapshot(Value::Null).to_bytes();
        let back = StarModel::from_snapshot(&Snapshot::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.params, model.params);
        assert_eq!(back.moments, model.moments);
        assert_eq!(back.predict(&b).unwrap(), model.predict(&b).unwrap());
    }

    #[test]
    fn corrupt_input_is_rejected() {
        assert!(matches!(Snapshot::<f64>::from_bytes(b"nope"), Err(Error::Snapshot(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = DnnModel::<f32>::new(DnnConfig::new(vec![4], 2, vec![3]), &mut rng).unwrap();
        let bytes = model.to_snapshot(Value::Null).to_bytes();
        assert!(Snapshot::<f32>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Snapshot::<f64>::from_bytes(&bytes).is_err());
    }
}
