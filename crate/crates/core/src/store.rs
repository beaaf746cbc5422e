//! Corpus records, on-disk formats, and the generation-swapped embedding
//! table shared by the offline jobs and the serving path.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use arc_swap::ArcSwap;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector;

/// Allowed deviation of a stored row's L2 norm from 1.
pub const UNIT_NORM_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolRecord {
    pub id: String,
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub category: String,
    #[serde(default)]
    pub tags: Vec<String>,
    /// Number of outcome triples naming this tool. Derived, never ingested.
    #[serde(skip)]
    pub freq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub text: String,
    pub relevant: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Outcome {
    Failure,
    Success,
}

impl Outcome {
    pub fn is_success(self) -> bool {
        self == Outcome::Success
    }
}

impl From<bool> for Outcome {
    fn from(ok: bool) -> Self {
        if ok {
            Outcome::Success
        } else {
            Outcome::Failure
        }
    }
}

impl TryFrom<u8> for Outcome {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Outcome::Failure),
            1 => Ok(Outcome::Success),
            other => Err(format!("outcome must be 0 or 1, got {other}")),
        }
    }
}

impl From<Outcome> for u8 {
    fn from(o: Outcome) -> u8 {
        match o {
            Outcome::Failure => 0,
            Outcome::Success => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeTriple {
    pub query_id: String,
    pub tool_id: String,
    pub outcome: Outcome,
}

impl OutcomeTriple {
    pub fn new(query_id: impl Into<String>, tool_id: impl Into<String>, ok: bool) -> Self {
        OutcomeTriple {
            query_id: query_id.into(),
            tool_id: tool_id.into(),
            outcome: ok.into(),
        }
    }
}

fn load_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

fn check_unique<'a>(ids: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::DuplicateId(id.to_string()));
        }
    }
    Ok(())
}

/// Reads `tools.jsonl`. Records come back in file order with `freq = 0`.
pub fn load_tools(path: impl AsRef<Path>) -> Result<Vec<ToolRecord>> {
    let path = path.as_ref();
    let rows: Vec<(usize, ToolRecord)> = load_jsonl(path)?;
    for (line, t) in &rows {
        if t.description.trim().is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: *line,
                message: format!("tool `{}` has an empty description", t.id),
            });
        }
    }
    let tools: Vec<ToolRecord> = rows.into_iter().map(|(_, t)| t).collect();
    check_unique(tools.iter().map(|t| t.id.as_str()))?;
    Ok(tools)
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<QueryRecord>> {
    let queries: Vec<QueryRecord> = load_jsonl(path.as_ref())?
        .into_iter()
        .map(|(_, q)| q)
        .collect();
    check_unique(queries.iter().map(|q| q.id.as_str()))?;
    Ok(queries)
}

/// Reads `outcomes.jsonl`; any outcome other than 0 or 1 is rejected with
/// the offending line number.
pub fn load_outcomes(path: impl AsRef<Path>) -> Result<Vec<OutcomeTriple>> {
    Ok(load_jsonl(path.as_ref())?
        .into_iter()
        .map(|(_, o)| o)
        .collect())
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Tools, labeled queries and outcome logs with referential integrity checked.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub tools: Vec<ToolRecord>,
    pub queries: Vec<QueryRecord>,
    pub outcomes: Vec<OutcomeTriple>,
}

impl Corpus {
    /// Validates ids and fills each tool's `freq` from the outcome log.
    pub fn new(
        mut tools: Vec<ToolRecord>,
        queries: Vec<QueryRecord>,
        outcomes: Vec<OutcomeTriple>,
    ) -> Result<Self> {
        check_unique(tools.iter().map(|t| t.id.as_str()))?;
        check_unique(queries.iter().map(|q| q.id.as_str()))?;
        let tool_idx: HashMap<&str, usize> = tools
            .iter()
            .enumerate()
            .map(|(i, t)| (t.id.as_str(), i))
            .collect();
        for q in &queries {
            for r in &q.relevant {
                if !tool_idx.contains_key(r.as_str()) {
                    return Err(Error::UnknownId(r.clone()));
                }
            }
        }
        let query_ids: HashSet<&str> = queries.iter().map(|q| q.id.as_str()).collect();
        let mut freq = vec![0u64; tools.len()];
        for o in &outcomes {
            if !query_ids.contains(o.query_id.as_str()) {
                return Err(Error::UnknownId(o.query_id.clone()));
            }
            match tool_idx.get(o.tool_id.as_str()) {
                Some(&i) => freq[i] += 1,
                None => return Err(Error::UnknownId(o.tool_id.clone())),
            }
        }
        for (t, f) in tools.iter_mut().zip(freq) {
            t.freq = f;
        }
        Ok(Corpus {
            tools,
            queries,
            outcomes,
        })
    }

    /// Loads whichever of the three files exist; `outcomes.jsonl` is optional.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let tools = load_tools(dir.join("tools.jsonl"))?;
        let queries = load_queries(dir.join("queries.jsonl"))?;
        let outcomes_path = dir.join("outcomes.jsonl");
        let outcomes = if outcomes_path.exists() {
            load_outcomes(outcomes_path)?
        } else {
            Vec::new()
        };
        Corpus::new(tools, queries, outcomes)
    }

    pub fn tool(&self, id: &str) -> Option<&ToolRecord> {
        self.tools.iter().find(|t| t.id == id)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TableHeader {
    dim: usize,
    count: usize,
    dtype: String,
    generation: u64,
    ids: Vec<String>,
}

/// Generation-versioned map from tool id to a unit vector.
///
/// Rows are stored contiguously in `ids` order. Tables are immutable once
/// built; a refined table is a new value.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    generation: u64,
    ids: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
    approved: bool,
}

impl PartialEq for EmbeddingTable {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.generation == other.generation
            && self.ids == other.ids
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl EmbeddingTable {
    /// Builds a table from row-major data. Every row must be finite and unit
    /// norm within [`UNIT_NORM_TOL`].
    pub fn new(dim: usize, ids: Vec<String>, data: Vec<f32>) -> Result<Self> {
        let t = Self::build(dim, ids, data)?;
        for (i, row) in t.rows().enumerate() {
            let n = vector::norm(row);
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::Format(format!(
                    "row `{}` has norm {n}, expected 1",
                    t.ids[i]
                )));
            }
        }
        Ok(t)
    }

    /// Builds a table normalizing every row first.
    pub fn from_unnormalized(dim: usize, ids: Vec<String>, mut data: Vec<f32>) -> Result<Self> {
        if dim > 0 {
            for (i, row) in data.chunks_mut(dim).enumerate() {
                let v = vector::normalized_f32(&vector::to_f64(row)).ok_or_else(|| {
                    Error::Format(format!("row {i} has zero norm and cannot be normalized"))
                })?;
                row.copy_from_slice(&v);
            }
        }
        Self::new(dim, ids, data)
    }

    fn build(dim: usize, ids: Vec<String>, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Format("dim must be positive".into()));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::Format(format!(
                "payload holds {} floats, expected {} rows x {dim}",
                data.len(),
                ids.len()
            )));
        }
        if let Some(x) = data.iter().find(|x| !x.is_finite()) {
            return Err(Error::Format(format!("non-finite value {x} in payload")));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate row id `{id}`")));
            }
        }
        Ok(EmbeddingTable {
            dim,
            generation: 0,
            ids,
            data,
            index,
            approved: false,
        })
    }

    pub fn with_generation(mut self, generation: u64) -> Self {
        self.generation = generation;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index_of(id).map(|i| self.row(i))
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Whether this table passed a validation gate and may be swapped in.
    pub fn is_approved(&self) -> bool {
        self.approved
    }

    pub(crate) fn mark_approved(&mut self) {
        self.approved = true;
    }

    pub(crate) fn clear_approval(&mut self) {
        self.approved = false;
    }

    /// Copy of this table with one row replaced by new data (kept for tests
    /// and scenario builders).
    pub fn with_rows_replaced(&self, rows: &[(usize, Vec<f32>)]) -> Result<Self> {
        let mut data = self.data.clone();
        for (i, v) in rows {
            if v.len() != self.dim {
                return Err(Error::DimMismatch {
                    expected: self.dim,
                    actual: v.len(),
                });
            }
            data[i * self.dim..(i + 1) * self.dim].copy_from_slice(v);
        }
        Ok(EmbeddingTable::new(self.dim, self.ids.clone(), data)?.with_generation(self.generation))
    }

    fn header_line(&self) -> Result<Vec<u8>> {
        let header = TableHeader {
            dim: self.dim,
            count: self.ids.len(),
            dtype: "f32le".into(),
            generation: self.generation,
            ids: self.ids.clone(),
        };
        let mut line = serde_json::to_vec(&header)?;
        line.push(b'\n');
        Ok(line)
    }

    /// Size in bytes of the serialized header line, including the newline.
    pub fn header_len(&self) -> Result<usize> {
        Ok(self.header_line()?.len())
    }
}

pub fn write_embedding_table(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    for (i, row) in table.rows().enumerate() {
        let n = vector::norm(row);
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::Format(format!(
                "refusing to write row `{}` with norm {n}",
                table.ids[i]
            )));
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&table.header_line()?)
        .map_err(|e| Error::io(path, e))?;
    let mut payload = Vec::with_capacity(table.data.len() * 4);
    for x in &table.data {
        payload.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&payload).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a `*.emb` file and checks that every row is unit norm.
pub fn read_embedding_table(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let (header, data) = read_raw(path.as_ref())?;
    Ok(EmbeddingTable::new(header.dim, header.ids, data)?.with_generation(header.generation))
}

/// Reads a `*.emb` file without the unit-norm check, normalizing every row.
/// Used for externally produced vectors.
pub fn read_embedding_table_normalizing(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let (header, data) = read_raw(path.as_ref())?;
    Ok(
        EmbeddingTable::from_unnormalized(header.dim, header.ids, data)?
            .with_generation(header.generation),
    )
}

fn read_raw(path: &Path) -> Result<(TableHeader, Vec<f32>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)
        .map_err(|e| Error::io(path, e))?;
    if line.last() != Some(&b'\n') {
        return Err(Error::Format("missing header line".into()));
    }
    let header: TableHeader = serde_json::from_slice(&line[..line.len() - 1])
        .map_err(|e| Error::Format(format!("bad header: {e}")))?;
    if header.dtype != "f32le" {
        return Err(Error::Format(format!("unsupported dtype `{}`", header.dtype)));
    }
    if header.ids.len() != header.count {
        return Err(Error::Format(format!(
            "header count {} but {} ids",
            header.count,
            header.ids.len()
        )));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let expected = header.count * header.dim * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "header declares {} rows of dim {} ({expected} bytes), payload has {} bytes",
            header.count,
            header.dim,
            bytes.len()
        )));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok((header, data))
}

/// Produces the table that replaces `current`: the candidate's rows under
/// generation `current + 1`. The candidate must be gate-approved and share
/// `current`'s dimension.
pub fn swap_generation(
    current: &EmbeddingTable,
    candidate: &EmbeddingTable,
) -> Result<EmbeddingTable> {
    if candidate.dim != current.dim {
        return Err(Error::DimMismatch {
            expected: current.dim,
            actual: candidate.dim,
        });
    }
    if !candidate.approved {
        return Err(Error::Unapproved);
    }
    let mut next = candidate.clone();
    next.generation = current.generation + 1;
    next.approved = false;
    Ok(next)
}

/// The live table for one serving slot.
///
/// Readers take a snapshot with [`TableStore::load`] and keep using it for
/// the whole request; a concurrent [`TableStore::publish`] never affects a
/// snapshot already taken. Writers are serialized.
#[derive(Debug)]
pub struct TableStore {
    live: ArcSwap<EmbeddingTable>,
    writer: Mutex<()>,
}

impl TableStore {
    pub fn new(table: EmbeddingTable) -> Self {
        TableStore {
            live: ArcSwap::from_pointee(table),
            writer: Mutex::new(()),
        }
    }

    pub fn load(&self) -> Arc<EmbeddingTable> {
        self.live.load_full()
    }

    pub fn generation(&self) -> u64 {
        self.live.load().generation
    }

    /// Swaps in an approved candidate; returns the new generation.
    pub fn publish(&self, candidate: &EmbeddingTable) -> Result<u64> {
        let _guard = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        let current = self.live.load_full();
        let next = swap_generation(&current, candidate)?;
        let generation = next.generation;
        self.live.store(Arc::new(next));
        Ok(generation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_lines(dir: &Path, name: &str, lines: &[&str]) -> std::path::PathBuf {
        let p = dir.join(name);
        let mut f = File::create(&p).unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        p
    }

    fn unit_table(dim: usize, n: usize) -> EmbeddingTable {
        let ids = (0..n).map(|i| format!("t{i}")).collect();
        let mut data = vec![0.0f32; n * dim];
        for i in 0..n {
            data[i * dim + (i % dim)] = 1.0;
        }
        EmbeddingTable::new(dim, ids, data).unwrap()
    }

    #[test]
    fn loads_tool_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_lines(
            dir.path(),
            "tools.jsonl",
            &[r#"{"id":"buildbetter","name":"buildbetter","description":"Chat with the knowledge of all your calls...","category":"","tags":[]}"#],
        );
        let tools = load_tools(&p).unwrap();
        assert_eq!(tools.len(), 1);
        assert_eq!(tools[0].id, "buildbetter");
        assert_eq!(
            tools[0].description,
            "Chat with the knowledge of all your calls..."
        );
        assert_eq!(tools[0].freq, 0);
    }

    #[test]
    fn empty_file_is_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_lines(dir.path(), "tools.jsonl", &[]);
        assert!(load_tools(&p).unwrap().is_empty());
    }

    #[test]
    fn duplicate_tool_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_lines(
            dir.path(),
            "tools.jsonl",
            &[
                r#"{"id":"x","name":"a","description":"d"}"#,
                r#"{"id":"x","name":"b","description":"e"}"#,
            ],
        );
        match load_tools(&p) {
            Err(Error::DuplicateId(id)) => assert_eq!(id, "x"),
            other => panic!("expected duplicate id, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_names_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_lines(
            dir.path(),
            "tools.jsonl",
            &[r#"{"id":"a","name":"a","description":"d"}"#, "{not json"],
        );
        match load_tools(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn query_and_outcome_records() {
        let dir = tempfile::tempdir().unwrap();
        let q = write_lines(
            dir.path(),
            "queries.jsonl",
            &[r#"{"id":"q1","text":"...verbatim transcript of the strategy call...","relevant":["buildbetter"]}"#],
        );
        let queries = load_queries(&q).unwrap();
        assert_eq!(queries[0].relevant, vec!["buildbetter".to_string()]);

        let o = write_lines(
            dir.path(),
            "outcomes.jsonl",
            &[r#"{"query_id":"q1","tool_id":"t1","outcome":1}"#],
        );
        assert_eq!(
            load_outcomes(&o).unwrap(),
            vec![OutcomeTriple::new("q1", "t1", true)]
        );

        let bad = write_lines(
            dir.path(),
            "bad.jsonl",
            &[r#"{"query_id":"q1","tool_id":"t1","outcome":2}"#],
        );
        assert!(matches!(load_outcomes(&bad), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn corpus_checks_references_and_counts_freq() {
        let tool = |id: &str| ToolRecord {
            id: id.into(),
            name: id.into(),
            description: "d".into(),
            category: String::new(),
            tags: vec![],
            freq: 0,
        };
        let q = QueryRecord {
            id: "q1".into(),
            text: "x".into(),
            relevant: vec!["a".into()],
        };
        let c = Corpus::new(
            vec![tool("a"), tool("b")],
            vec![q.clone()],
            vec![
                OutcomeTriple::new("q1", "a", true),
                OutcomeTriple::new("q1", "a", false),
                OutcomeTriple::new("q1", "b", false),
            ],
        )
        .unwrap();
        assert_eq!(c.tools[0].freq, 2);
        assert_eq!(c.tools[1].freq, 1);

        let bad = QueryRecord {
            relevant: vec!["zzz".into()],
            ..q
        };
        assert!(matches!(
            Corpus::new(vec![tool("a")], vec![bad], vec![]),
            Err(Error::UnknownId(id)) if id == "zzz"
        ));
    }

    #[test]
    fn table_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ids = vec!["a".to_string(), "b".into(), "c".into()];
        let raw = vec![
            0.1f32, 0.2, 0.3, 0.4, -1.0, 0.5, 0.25, 0.0, 0.3, 0.3, 0.3, -0.3,
        ];
        let t = EmbeddingTable::from_unnormalized(4, ids, raw)
            .unwrap()
            .with_generation(3);
        let p = dir.path().join("t.emb");
        write_embedding_table(&t, &p).unwrap();
        let back = read_embedding_table(&p).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.generation(), 3);
    }

    #[test]
    fn short_payload_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("short.emb");
        let mut f = File::create(&p).unwrap();
        writeln!(
            f,
            r#"{{"dim":2,"count":5,"dtype":"f32le","generation":0,"ids":["a","b","c","d","e"]}}"#
        )
        .unwrap();
        for _ in 0..4 {
            f.write_all(&1.0f32.to_le_bytes()).unwrap();
            f.write_all(&0.0f32.to_le_bytes()).unwrap();
        }
        drop(f);
        assert!(matches!(read_embedding_table(&p), Err(Error::Format(_))));
    }

    #[test]
    fn non_finite_payload_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nan.emb");
        let mut f = File::create(&p).unwrap();
        writeln!(
            f,
            r#"{{"dim":2,"count":1,"dtype":"f32le","generation":0,"ids":["a"]}}"#
        )
        .unwrap();
        f.write_all(&f32::NAN.to_le_bytes()).unwrap();
        f.write_all(&0.0f32.to_le_bytes()).unwrap();
        drop(f);
        assert!(matches!(read_embedding_table(&p), Err(Error::Format(_))));
    }

    #[test]
    fn file_size_is_header_plus_payload() {
        let dir = tempfile::tempdir().unwrap();
        let t = unit_table(384, 2413);
        let p = dir.path().join("big.emb");
        write_embedding_table(&t, &p).unwrap();
        let size = std::fs::metadata(&p).unwrap().len() as usize;
        assert_eq!(size, t.header_len().unwrap() + 2413 * 384 * 4);
    }

    #[test]
    fn swap_increments_generation() {
        let current = unit_table(4, 3).with_generation(7);
        let mut cand = unit_table(4, 3);
        cand.mark_approved();
        let next = swap_generation(&current, &cand).unwrap();
        assert_eq!(next.generation(), 8);
        assert!(!next.is_approved());
    }

    #[test]
    fn swap_rejects_dim_mismatch_and_unapproved() {
        let current = unit_table(384, 2);
        let mut other = unit_table(256, 2);
        other.mark_approved();
        assert!(matches!(
            swap_generation(&current, &other),
            Err(Error::DimMismatch {
                expected: 384,
                actual: 256
            })
        ));

        let store = TableStore::new(current.with_generation(7));
        let unapproved = unit_table(384, 2);
        assert!(matches!(store.publish(&unapproved), Err(Error::Unapproved)));
        assert_eq!(store.generation(), 7);
    }

    #[test]
    fn non_unit_rows_rejected() {
        let r = EmbeddingTable::new(2, vec!["a".into()], vec![1.0, 1.0]);
        assert!(matches!(r, Err(Error::Format(_))));
    }
}
