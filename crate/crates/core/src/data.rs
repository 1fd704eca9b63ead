//! Triple ingestion, vocabularies, reciprocal augmentation and label indexes.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type Triple = (u32, u32, u32);

const CACHE_MAGIC: &[u8; 4] = b"KGD1";
const REVERSE_SUFFIX: &str = "_inv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    fn index(self) -> usize {
        match self {
            Split::Train => 0,
            Split::Valid => 1,
            Split::Test => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

/// Entity and relation names with dense ids.
///
/// Relation ids `0..base_relations` are the relations found in the files;
/// the reciprocal of relation `r` is `r + base_relations`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    entity_names: Vec<String>,
    relation_names: Vec<String>,
    base_relations: usize,
}

impl Vocab {
    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn num_base_relations(&self) -> usize {
        self.base_relations
    }

    pub fn entity_name(&self, id: u32) -> &str {
        &self.entity_names[id as usize]
    }

    pub fn relation_name(&self, id: u32) -> &str {
        &self.relation_names[id as usize]
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn entity_id(&self, name: &str) -> Option<u32> {
        self.entity_names.iter().position(|n| n == name).map(|i| i as u32)
    }

    pub fn relation_id(&self, name: &str) -> Option<u32> {
        self.relation_names.iter().position(|n| n == name).map(|i| i as u32)
    }

    pub fn reciprocal(&self, rel: u32) -> u32 {
        let base = self.base_relations as u32;
        if rel < base {
            rel + base
        } else {
            rel - base
        }
    }

    pub fn is_reciprocal(&self, rel: u32) -> bool {
        (rel as usize) >= self.base_relations
    }

    pub fn entity_digest(&self) -> String {
        digest(&self.entity_names)
    }

    pub fn relation_digest(&self) -> String {
        digest(&self.relation_names)
    }

    /// Relation names ordered by edit distance to `query`, closest first.
    pub fn nearest_relations(&self, query: &str, limit: usize) -> Vec<&str> {
        let mut scored: Vec<(usize, &str)> = self
            .relation_names
            .iter()
            .map(|n| (edit_distance(query, n), n.as_str()))
            .collect();
        scored.sort();
        scored.into_iter().take(limit).map(|(_, n)| n).collect()
    }

    fn from_base(entity_names: Vec<String>, base_names: Vec<String>) -> Self {
        let base_relations = base_names.len();
        let mut relation_names = base_names.clone();
        for name in &base_names {
            let mut reversed = format!("{name}{REVERSE_SUFFIX}");
            while relation_names.contains(&reversed) {
                reversed.push_str(REVERSE_SUFFIX);
            }
            relation_names.push(reversed);
        }
        Self {
            entity_names,
            relation_names,
            base_relations,
        }
    }
}

fn digest(names: &[String]) -> String {
    let mut h = Sha256::new();
    for n in names {
        h.update((n.len() as u32).to_le_bytes());
        h.update(n.as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn edit_distance(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.chars().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != *cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

/// Integer-encoded triples of all three splits plus the kvsAll and filter indexes.
#[derive(Debug, Clone)]
pub struct TripleStore {
    vocab: Vocab,
    base: [Vec<Triple>; 3],
    splits: [Vec<Triple>; 3],
    train_pairs: Vec<(u32, u32)>,
    kvsall: HashMap<(u32, u32), Vec<u32>>,
    filter: HashMap<(u32, u32), Vec<u32>>,
}

impl TripleStore {
    /// Builds a store from base triples (no reciprocals), checking id bounds.
    pub fn from_base(
        entity_names: Vec<String>,
        relation_names: Vec<String>,
        base: [Vec<Triple>; 3],
    ) -> Result<Self> {
        let vocab = Vocab::from_base(entity_names, relation_names);
        let ne = vocab.num_entities() as u32;
        let nr = vocab.num_base_relations() as u32;
        for (split, triples) in Split::ALL.iter().zip(&base) {
            if let Some(t) = triples.iter().find(|t| t.0 >= ne || t.2 >= ne || t.1 >= nr) {
                return Err(Error::Format(format!(
                    "{} triple {:?} out of vocabulary bounds",
                    split.name(),
                    t
                )));
            }
        }
        let unique = |names: &[String]| {
            let mut v: Vec<&String> = names.iter().collect();
            v.sort();
            v.windows(2).all(|w| w[0] != w[1])
        };
        if !unique(&vocab.entity_names) || !unique(&vocab.relation_names) {
            return Err(Error::Format("duplicate names in vocabulary".into()));
        }

        let splits = base.clone().map(|triples| {
            let mut out = Vec::with_capacity(triples.len() * 2);
            out.extend_from_slice(&triples);
            out.extend(triples.iter().map(|&(h, r, t)| (t, vocab.reciprocal(r), h)));
            out
        });

        let mut train_pairs = Vec::new();
        let mut kvsall: HashMap<(u32, u32), Vec<u32>> = HashMap::new();
        for &(h, r, t) in &splits[0] {
            let entry = kvsall.entry((h, r)).or_insert_with(|| {
                train_pairs.push((h, r));
                Vec::new()
            });
            entry.push(t);
        }
        let mut filter: HashMap<(u32, u32), Vec<u32>> = HashMap::new();
        for &(h, r, t) in splits.iter().flatten() {
            filter.entry((h, r)).or_default().push(t);
        }
        for tails in kvsall.values_mut().chain(filter.values_mut()) {
            tails.sort_unstable();
            tails.dedup();
        }

        Ok(Self {
            vocab,
            base,
            splits,
            train_pairs,
            kvsall,
            filter,
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn num_entities(&self) -> usize {
        self.vocab.num_entities()
    }

    pub fn num_relations(&self) -> usize {
        self.vocab.num_relations()
    }

    /// Triples of a split, reciprocals included.
    pub fn triples(&self, split: Split) -> &[Triple] {
        &self.splits[split.index()]
    }

    /// Triples of a split as they appeared in the input.
    pub fn base_triples(&self, split: Split) -> &[Triple] {
        &self.base[split.index()]
    }

    /// Distinct `(head, relation)` training pairs in first-occurrence order.
    pub fn train_pairs(&self) -> &[(u32, u32)] {
        &self.train_pairs
    }

    /// Training tails of `(head, rel)`; empty for pairs that are not training rows.
    pub fn kvsall_targets(&self, head: u32, rel: u32) -> &[u32] {
        self.kvsall.get(&(head, rel)).map_or(&[], Vec::as_slice)
    }

    /// All known tails of `(head, rel)` over every split.
    pub fn known_tails(&self, head: u32, rel: u32) -> &[u32] {
        self.filter.get(&(head, rel)).map_or(&[], Vec::as_slice)
    }

    /// Known tails of `(head, rel)` other than `gold`; these are removed before ranking.
    pub fn filter_candidates(&self, head: u32, rel: u32, gold: u32) -> Vec<u32> {
        self.known_tails(head, rel)
            .iter()
            .copied()
            .filter(|&t| t != gold)
            .collect()
    }

    /// Distinct training heads of `rel`, ascending.
    pub fn train_heads(&self, rel: u32) -> Vec<u32> {
        let mut heads: Vec<u32> = self
            .train_pairs
            .iter()
            .filter(|p| p.1 == rel)
            .map(|p| p.0)
            .collect();
        heads.sort_unstable();
        heads
    }

    /// One-line summary in the style of dataset statistics tables.
    pub fn stats_line(&self) -> String {
        format!(
            "entities={} relations={} train={} valid={} test={}",
            self.num_entities(),
            self.vocab.num_base_relations(),
            self.base[0].len(),
            self.base[1].len(),
            self.base[2].len()
        )
    }

    /// Writes the binary cache: magic, counts, names, base triple arrays.
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(CACHE_MAGIC)?;
        let counts = [
            self.vocab.num_entities(),
            self.vocab.num_base_relations(),
            self.base[0].len(),
            self.base[1].len(),
            self.base[2].len(),
        ];
        for c in counts {
            w.write_all(&(c as u32).to_le_bytes())?;
        }
        let base_names = &self.vocab.relation_names[..self.vocab.base_relations];
        for name in self.vocab.entity_names.iter().chain(base_names) {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
        }
        for split in &self.base {
            for &(h, r, t) in split {
                for v in [h, r, t] {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_cache(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut cur = ByteCursor::new(&bytes);
        if cur.take(4)? != CACHE_MAGIC {
            return Err(Error::Format(format!("{}: not a KGD1 cache", path.display())));
        }
        let mut counts = [0usize; 5];
        for c in counts.iter_mut() {
            *c = cur.u32()? as usize;
        }
        let mut names = |n: usize| -> Result<Vec<String>> {
            (0..n).map(|_| cur.string()).collect()
        };
        let entities = names(counts[0])?;
        let relations = names(counts[1])?;
        let mut base: [Vec<Triple>; 3] = Default::default();
        for (split, &n) in base.iter_mut().zip(&counts[2..]) {
            split.reserve(n);
            for _ in 0..n {
                split.push((cur.u32()?, cur.u32()?, cur.u32()?));
            }
        }
        if !cur.is_empty() {
            return Err(Error::Format("trailing bytes after KGD1 payload".into()));
        }
        Self::from_base(entities, relations, base)
    }
}

pub(crate) struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated input at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_bits(self.u32()?))
    }

    pub(crate) fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Format("name is not UTF-8".into()))
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

#[derive(Default)]
struct Interner {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Interner {
    fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        id
    }
}

/// Parses `head<TAB>relation<TAB>tail` lines. Blank lines are skipped.
pub fn parse_triples(path: &Path, text: &str) -> Result<Vec<(String, String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        out.push((fields[0].to_owned(), fields[1].to_owned(), fields[2].to_owned()));
    }
    Ok(out)
}

/// Loads the three split files into a store.
///
/// Ids are assigned by first occurrence, scanning train, then valid, then
/// test. Names seen only in valid/test are kept.
pub fn load_splits(train: &Path, valid: &Path, test: &Path) -> Result<TripleStore> {
    let mut entities = Interner::default();
    let mut relations = Interner::default();
    let mut base: [Vec<Triple>; 3] = Default::default();
    for (slot, path) in base.iter_mut().zip([train, valid, test]) {
        let text = fs::read_to_string(path).map_err(|e| {
            std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))
        })?;
        for (h, r, t) in parse_triples(path, &text)? {
            let h = entities.intern(&h);
            let r = relations.intern(&r);
            let t = entities.intern(&t);
            slot.push((h, r, t));
        }
    }
    TripleStore::from_base(entities.names, relations.names, base)
}

/// Loads `train.txt`, `valid.txt` and `test.txt` from a directory.
pub fn load_dir(dir: &Path) -> Result<TripleStore> {
    load_splits(
        &dir.join("train.txt"),
        &dir.join("valid.txt"),
        &dir.join("test.txt"),
    )
}

/// Opens either a KGD1 cache file or a directory of split files.
pub fn open(path: &Path) -> Result<TripleStore> {
    if path.is_dir() {
        load_dir(path)
    } else {
        TripleStore::read_cache(path)
    }
}

/// Parameters of the synthetic multi-semantics graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub cluster_count: usize,
    pub entities_per_cluster: usize,
    /// Embedding dimension suggested in the emitted `synth.conf`.
    pub dimension_hint: usize,
    pub noise_rate: f64,
    pub seed: u64,
    /// Upper bound on `cluster_count * entities_per_cluster`.
    pub max_entities: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            cluster_count: 3,
            entities_per_cluster: 50,
            dimension_hint: 32,
            noise_rate: 0.0,
            seed: 7,
            max_entities: 1 << 20,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.cluster_count < 2 {
            return Err(Error::Config("cluster count must be at least 2".into()));
        }
        if self.entities_per_cluster < 2 {
            return Err(Error::Config("entities per cluster must be at least 2".into()));
        }
        if !(0.0..0.5).contains(&self.noise_rate) {
            return Err(Error::Config("noise rate must lie in [0, 0.5)".into()));
        }
        let total = self
            .cluster_count
            .checked_mul(self.entities_per_cluster)
            .filter(|&n| n <= self.max_entities);
        if total.is_none() {
            return Err(Error::Config(format!(
                "{} clusters x {} entities exceeds the entity budget of {}",
                self.cluster_count, self.entities_per_cluster, self.max_entities
            )));
        }
        Ok(())
    }
}

pub const SYNTH_RELATION: &str = "rel_multi";

#[derive(Debug, Clone)]
pub struct SynthSummary {
    pub files: Vec<PathBuf>,
    pub triples: usize,
    pub noisy: usize,
    /// Cluster id per entity, indexed like the entity names `c{cluster}_e{index}`.
    pub clusters: Vec<(String, usize)>,
}

/// Writes a synthetic graph with one multi-semantics relation.
///
/// Entities are split into `k` clusters of `m`. Every entity of cluster `i`
/// is a head of `rel_multi` whose tails are the whole of cluster
/// `(i + 1) mod k`, so the tail pools are disjoint and the relation needs a
/// different translation per cluster (the translations around the cycle
/// cannot all be equal). A `noise_rate` fraction of triples gets its tail
/// rewired to a uniformly drawn entity outside the head's pool.
///
/// Output: `train.txt`, `valid.txt`, `test.txt` (80/10/10 after a seeded
/// shuffle), `clusters.csv` (`entity,cluster`), `noise.csv`
/// (`head,relation,tail,noise`) and `synth.conf`.
pub fn generate_synthetic(spec: &SynthSpec, out_dir: &Path) -> Result<SynthSummary> {
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};

    spec.validate()?;
    let k = spec.cluster_count;
    let m = spec.entities_per_cluster;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(spec.seed);
    let name = |c: usize, i: usize| format!("c{c}_e{i}");
    let total = k * m;

    let mut emitted: Vec<(usize, usize, bool)> = Vec::with_capacity(total * m);
    let mut seen = std::collections::HashSet::new();
    for c in 0..k {
        let pool = (c + 1) % k;
        for i in 0..m {
            let head = c * m + i;
            for j in 0..m {
                let tail = pool * m + j;
                seen.insert((head, tail));
                emitted.push((head, tail, false));
            }
        }
    }
    let mut noisy = 0;
    for triple in emitted.iter_mut() {
        if rng.gen_bool(spec.noise_rate) {
            let head = triple.0;
            let pool = (head / m + 1) % k;
            // k >= 2 guarantees at least m candidates outside the pool.
            let tail = loop {
                let t = rng.gen_range(0..total);
                if t / m != pool && !seen.contains(&(head, t)) {
                    break t;
                }
            };
            seen.insert((head, tail));
            *triple = (head, tail, true);
            noisy += 1;
        }
    }
    emitted.shuffle(&mut rng);

    fs::create_dir_all(out_dir)?;
    let n = emitted.len();
    let n_train = n * 8 / 10;
    let n_valid = n / 10;
    let parts = [
        ("train.txt", &emitted[..n_train]),
        ("valid.txt", &emitted[n_train..n_train + n_valid]),
        ("test.txt", &emitted[n_train + n_valid..]),
    ];
    let mut files = Vec::new();
    for (file, triples) in parts {
        let path = out_dir.join(file);
        let mut w = BufWriter::new(fs::File::create(&path)?);
        for &(h, t, _) in triples {
            writeln!(w, "{}\t{SYNTH_RELATION}\t{}", name(h / m, h % m), name(t / m, t % m))?;
        }
        w.flush()?;
        files.push(path);
    }

    let clusters: Vec<(String, usize)> = (0..total).map(|e| (name(e / m, e % m), e / m)).collect();
    let path = out_dir.join("clusters.csv");
    let mut w = BufWriter::new(fs::File::create(&path)?);
    writeln!(w, "entity,cluster")?;
    for (entity, c) in &clusters {
        writeln!(w, "{entity},{c}")?;
    }
    w.flush()?;
    files.push(path);

    let path = out_dir.join("noise.csv");
    let mut w = BufWriter::new(fs::File::create(&path)?);
    writeln!(w, "head,relation,tail,noise")?;
    for &(h, t, is_noise) in &emitted {
        writeln!(
            w,
            "{},{SYNTH_RELATION},{},{}",
            name(h / m, h % m),
            name(t / m, t % m),
            u8::from(is_noise)
        )?;
    }
    w.flush()?;
    files.push(path);

    let path = out_dir.join("synth.conf");
    let mut w = BufWriter::new(fs::File::create(&path)?);
    writeln!(w, "# generated for {k} clusters x {m} entities, seed {}", spec.seed)?;
    writeln!(w, "dim = {}", spec.dimension_hint)?;
    writeln!(w, "dict_size = {}", k + 1)?;
    w.flush()?;
    files.push(path);

    Ok(SynthSummary {
        files,
        triples: n,
        noisy,
        clusters,
    })
}

/// Reads an `entity,cluster` CSV.
pub fn read_clusters(path: &Path) -> Result<Vec<(String, usize)>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let bad = || Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: "expected entity,cluster".into(),
        };
        let (entity, cluster) = line.rsplit_once(',').ok_or_else(bad)?;
        out.push((entity.to_owned(), cluster.parse().map_err(|_| bad())?));
    }
    Ok(out)
}
