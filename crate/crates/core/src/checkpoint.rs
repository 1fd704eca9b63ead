//! Binary checkpoints.
//!
//! Layout (little-endian): magic `CKP1`, `u32` version, `u32`-length-prefixed
//! header text (canonical config lines followed by run metadata lines), `u32`
//! tensor count, then per tensor a length-prefixed name, `u32` rank, `u32`
//! dims and the `f32` values.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::config::{parse_lines, TrainConfig};
use crate::data::{ByteCursor, TripleStore, Vocab};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::trainer::{Adam, Trainer};

const MAGIC: &[u8; 4] = b"CKP1";
pub const FORMAT_VERSION: u32 = 1;

const META_KEYS: [&str; 6] = [
    "epoch",
    "adam_step",
    "num_entities",
    "num_relations",
    "entity_digest",
    "relation_digest",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub trainer: Trainer,
    pub entity_digest: String,
    pub relation_digest: String,
}

impl Checkpoint {
    pub fn new(trainer: Trainer, vocab: &Vocab) -> Self {
        Self {
            trainer,
            entity_digest: vocab.entity_digest(),
            relation_digest: vocab.relation_digest(),
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.trainer.params
    }

    /// Fails when the checkpoint was trained on a different vocabulary.
    pub fn verify(&self, store: &TripleStore) -> Result<()> {
        let v = store.vocab();
        if v.entity_digest() != self.entity_digest {
            return Err(Error::Digest("entity vocabulary differs".into()));
        }
        if v.relation_digest() != self.relation_digest {
            return Err(Error::Digest("relation vocabulary differs".into()));
        }
        Ok(())
    }

    fn header_text(&self) -> String {
        let t = &self.trainer;
        let mut s = t.config.canonical_text();
        let meta = [
            t.epoch.to_string(),
            t.optim.step.to_string(),
            t.params.num_entities.to_string(),
            t.params.num_relations.to_string(),
            self.entity_digest.clone(),
            self.relation_digest.clone(),
        ];
        for (k, v) in META_KEYS.iter().zip(meta) {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let header = self.header_text();
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());

        let params = &self.trainer.params;
        let optim = &self.trainer.optim;
        let mut records: Vec<(String, Vec<usize>, &[f32])> = Vec::new();
        for (i, (name, shape, data)) in params.tensors().into_iter().enumerate() {
            records.push((name.to_owned(), shape.clone(), data));
            records.push((format!("adam.m.{name}"), shape.clone(), &optim.first[i]));
            records.push((format!("adam.v.{name}"), shape, &optim.second[i]));
        }
        out.extend_from_slice(&(records.len() as u32).to_le_bytes());
        for (name, shape, data) in records {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for d in shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = ByteCursor::new(bytes);
        if cur.take(4)? != MAGIC {
            return Err(Error::Format("not a CKP1 checkpoint".into()));
        }
        let version = cur.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header = cur.string()?;
        let mut config_text = String::new();
        let mut meta = std::collections::HashMap::new();
        for (k, v) in parse_lines(&header)? {
            if META_KEYS.contains(&k.as_str()) {
                meta.insert(k, v);
            } else {
                config_text.push_str(&format!("{k} = {v}\n"));
            }
        }
        let config = TrainConfig::from_canonical_text(&config_text)?;
        let get = |k: &str| -> Result<&String> {
            meta.get(k)
                .ok_or_else(|| Error::Format(format!("checkpoint header lacks '{k}'")))
        };
        let num = |k: &str| -> Result<u64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Format(format!("checkpoint header: bad '{k}'")))
        };
        let epoch = num("epoch")? as usize;
        let step = num("adam_step")?;
        let num_entities = num("num_entities")? as usize;
        let num_relations = num("num_relations")? as usize;

        let mut params = ModelParams::init(&config, num_entities, num_relations);
        let mut optim = Adam::new(&params);
        optim.step = step;

        let count = cur.u32()? as usize;
        let expected = params.tensors().map(|(name, shape, _)| (name, shape));
        if count != expected.len() * 3 {
            return Err(Error::Format(format!("expected {} tensors, found {count}", expected.len() * 3)));
        }
        for (i, (name, shape)) in expected.iter().enumerate() {
            let wanted = [
                name.to_string(),
                format!("adam.m.{name}"),
                format!("adam.v.{name}"),
            ];
            for (j, want) in wanted.iter().enumerate() {
                let got = cur.string()?;
                if &got != want {
                    return Err(Error::Format(format!("expected tensor '{want}', found '{got}'")));
                }
                let rank = cur.u32()? as usize;
                let dims: Vec<usize> = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<_>>()?;
                if &dims != shape {
                    return Err(Error::Format(format!(
                        "tensor '{want}' has shape {dims:?}, expected {shape:?}"
                    )));
                }
                let slot: &mut Vec<f32> = match j {
                    0 => params.tensors_mut().into_iter().nth(i).unwrap(),
                    1 => &mut optim.first[i],
                    _ => &mut optim.second[i],
                };
                for v in slot.iter_mut() {
                    *v = cur.f32()?;
                }
            }
        }
        if !cur.is_empty() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self {
            trainer: Trainer {
                config,
                params,
                optim,
                epoch,
            },
            entity_digest: get("entity_digest")?.clone(),
            relation_digest: get("relation_digest")?.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Mode;

    fn store(names: &[&str]) -> TripleStore {
        TripleStore::from_base(
            names.iter().map(|s| s.to_string()).collect(),
            vec!["r".into(), "s".into()],
            [vec![(0, 0, 1), (1, 1, 2)], vec![], vec![]],
        )
        .unwrap()
    }

    fn trained(mode: Mode) -> (TripleStore, Checkpoint) {
        let s = store(&["a", "b", "c"]);
        let cfg = TrainConfig {
            mode,
            dim: 5,
            dict_size: 3,
            epochs: 2,
            batch_size: 2,
            mlp_per_relation: true,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(cfg, &s).unwrap();
        t.fit(&s, |_, _| Ok(())).unwrap();
        let ck = Checkpoint::new(t, s.vocab());
        (s, ck)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for mode in [Mode::Codlr, Mode::Plain] {
            let (s, ck) = trained(mode);
            let bytes = ck.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.to_bytes(), bytes);
            back.verify(&s).unwrap();
        }
    }

    #[test]
    fn truncated_and_foreign_files_fail_cleanly() {
        let (_, ck) = trained(Mode::Codlr);
        let bytes = ck.to_bytes();
        for cut in [0, 3, 9, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err());
        }
        let mut wrong = bytes.clone();
        wrong[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&wrong), Err(Error::Version { found: 9, .. })));
    }

    #[test]
    fn other_vocab_is_a_digest_error() {
        let (_, ck) = trained(Mode::Codlr);
        let other = store(&["a", "b", "z"]);
        assert!(matches!(ck.verify(&other), Err(Error::Digest(_))));
    }
}
