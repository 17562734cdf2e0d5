//! File formats: dataset CSV, fixed-width binary partition files, the
//! workdir manifest, spilled join records and result CSV.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{self, File};
use std::hash::Hasher;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::index::QuadTree;
use crate::model::{MatchPair, PairRecord, TrajId, Trajectory, TrajectoryPoint};
use crate::partitioning::{EquiDepthHistogram, PartitionFile};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCHEMA_VERSION: u32 = 1;
/// Bytes per point in a partition file.
pub const POINT_RECORD_BYTES: usize = 32;

#[derive(Debug, Deserialize)]
struct CsvRow {
    traj_id: String,
    t: f64,
    x: f64,
    y: f64,
}

/// Reads a `traj_id,t,x,y` CSV, rejecting non-finite values and repeated
/// `(traj_id, t)`.
pub fn parse_dataset(path: &Path) -> Result<Vec<TrajectoryPoint>> {
    let file = File::open(path)?;
    parse_dataset_from(BufReader::new(file), path)
}

pub fn parse_dataset_from(reader: impl Read, path: &Path) -> Result<Vec<TrajectoryPoint>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["traj_id", "t", "x", "y"] {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("expected header `traj_id,t,x,y`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut seen: HashSet<(TrajId, u64)> = HashSet::new();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let row: CsvRow = rec.deserialize(Some(&headers)).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: e.to_string(),
        })?;
        let p = TrajectoryPoint::new(row.traj_id.as_str(), row.t, row.x, row.y);
        if !p.is_finite() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: "non-finite value".into(),
            });
        }
        if !seen.insert((p.traj_id.clone(), p.t.to_bits())) {
            return Err(Error::DuplicateTimestamp { traj: p.traj_id, t: p.t });
        }
        out.push(p);
    }
    Ok(out)
}

/// Writes points as CSV in the given order.
pub fn write_dataset(path: &Path, points: &[TrajectoryPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["traj_id", "t", "x", "y"])?;
    for p in points {
        w.write_record([p.traj_id.as_str(), &p.t.to_string(), &p.x.to_string(), &p.y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes trajectories as CSV, one trajectory after another.
pub fn write_trajectories(path: &Path, trajs: &[Trajectory]) -> Result<()> {
    let pts: Vec<TrajectoryPoint> = trajs.iter().flat_map(|t| t.points.iter().cloned()).collect();
    write_dataset(path, &pts)
}

/// Groups points into validated trajectories, sorted by id.
pub fn to_trajectories(points: &[TrajectoryPoint]) -> Result<Vec<Trajectory>> {
    let mut by: BTreeMap<TrajId, Vec<TrajectoryPoint>> = BTreeMap::new();
    for p in points {
        by.entry(p.traj_id.clone()).or_default().push(p.bare());
    }
    by.into_iter()
        .map(|(id, mut pts)| {
            pts.sort_by(|a, b| a.t.total_cmp(&b.t));
            Trajectory::new(id, pts)
        })
        .collect()
}

/// FNV-1a hash of a trajectory id, as stored in partition files.
pub fn id_hash(id: &TrajId) -> u64 {
    let mut h = FnvHasher::default();
    h.write(id.as_str().as_bytes());
    h.finish()
}

/// Hash-to-id table; fails if two ids collide.
pub fn id_table<'a>(ids: impl IntoIterator<Item = &'a TrajId>) -> Result<BTreeMap<u64, TrajId>> {
    let mut table: BTreeMap<u64, TrajId> = BTreeMap::new();
    for id in ids {
        let h = id_hash(id);
        match table.get(&h) {
            Some(other) if other != id => {
                return Err(Error::Manifest(format!("trajectory ids `{other}` and `{id}` share hash {h:016x}")));
            }
            Some(_) => {}
            None => {
                table.insert(h, id.clone());
            }
        }
    }
    Ok(table)
}

fn put_point(out: &mut Vec<u8>, p: &TrajectoryPoint) {
    out.extend_from_slice(&id_hash(&p.traj_id).to_le_bytes());
    out.extend_from_slice(&p.t.to_le_bytes());
    out.extend_from_slice(&p.x.to_le_bytes());
    out.extend_from_slice(&p.y.to_le_bytes());
}

fn get_point(bytes: &[u8], ids: &BTreeMap<u64, TrajId>) -> Result<TrajectoryPoint> {
    let word = |i: usize| <[u8; 8]>::try_from(&bytes[8 * i..8 * i + 8]).expect("8 bytes");
    let h = u64::from_le_bytes(word(0));
    let id = ids
        .get(&h)
        .ok_or_else(|| Error::Manifest(format!("id hash {h:016x} missing from the id table")))?;
    Ok(TrajectoryPoint::new(
        id.clone(),
        f64::from_le_bytes(word(1)),
        f64::from_le_bytes(word(2)),
        f64::from_le_bytes(word(3)),
    ))
}

/// Writes a partition file and returns its SHA-256 in hex.
pub fn write_partition_file(path: &Path, points: &[TrajectoryPoint]) -> Result<String> {
    let mut buf = Vec::with_capacity(points.len() * POINT_RECORD_BYTES);
    for p in points {
        put_point(&mut buf, p);
    }
    fs::write(path, &buf)?;
    Ok(hex::encode(Sha256::digest(&buf)))
}

/// Reads a partition file, checking its checksum when one is given.
pub fn read_partition_file(
    path: &Path,
    ids: &BTreeMap<u64, TrajId>,
    sha256: Option<&str>,
) -> Result<Vec<TrajectoryPoint>> {
    let buf = fs::read(path)?;
    if let Some(want) = sha256 {
        let got = hex::encode(Sha256::digest(&buf));
        if got != want {
            return Err(Error::Manifest(format!("checksum mismatch for {}", path.display())));
        }
    }
    if buf.len() % POINT_RECORD_BYTES != 0 {
        return Err(Error::Manifest(format!("{} is not a whole number of records", path.display())));
    }
    buf.chunks_exact(POINT_RECORD_BYTES).map(|c| get_point(c, ids)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the workdir.
    pub path: PathBuf,
    pub points: usize,
    pub group_id: usize,
    pub sha256: String,
}

/// Metadata of a repartitioned workdir.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub point_count: usize,
    pub time_range: (f64, f64),
    /// The `M - 1` inner histogram boundaries.
    pub boundaries: Vec<f64>,
    pub m: usize,
    pub k: usize,
    pub seed: u64,
    pub sample_rate: f64,
    pub sample_size: usize,
    pub files: Vec<FileEntry>,
    /// Id hash (hex) to trajectory id.
    pub ids: BTreeMap<String, String>,
    #[serde(default)]
    pub quadtree: Option<QuadTree>,
}

impl DatasetManifest {
    pub fn histogram(&self) -> EquiDepthHistogram {
        EquiDepthHistogram::from_inner(&self.boundaries, self.sample_size)
    }

    pub fn id_table(&self) -> Result<BTreeMap<u64, TrajId>> {
        self.ids
            .iter()
            .map(|(h, id)| {
                let h = u64::from_str_radix(h, 16).map_err(|e| Error::Manifest(format!("bad id hash `{h}`: {e}")))?;
                Ok((h, TrajId::new(id)))
            })
            .collect()
    }

    pub fn load(workdir: &Path) -> Result<Self> {
        let path = workdir.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(Error::MissingPreprocessing(format!(
                "no {MANIFEST_FILE} in {}; run `repartition` first",
                workdir.display()
            )));
        }
        let m: DatasetManifest = serde_json::from_reader(BufReader::new(File::open(&path)?))?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(Error::Manifest(format!("unsupported schema version {}", m.schema_version)));
        }
        Ok(m)
    }

    pub fn store(&self, workdir: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(workdir.join(MANIFEST_FILE))?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        Ok(())
    }
}

/// Writes repartitioned files under `<workdir>/parts` and the manifest.
#[allow(clippy::too_many_arguments)]
pub fn write_workdir(
    workdir: &Path,
    files: &[PartitionFile],
    hist: &EquiDepthHistogram,
    k: usize,
    seed: u64,
    sample_rate: f64,
    quadtree: Option<QuadTree>,
) -> Result<DatasetManifest> {
    let parts = workdir.join("parts");
    fs::create_dir_all(&parts)?;
    let all = files.iter().flat_map(|f| f.points.iter());
    let table = id_table(all.clone().map(|p| &p.traj_id))?;
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.t), hi.max(p.t)));
    let mut entries = Vec::with_capacity(files.len());
    for f in files {
        let rel = PathBuf::from("parts").join(format!("part-{:05}.bin", f.index));
        let sha256 = write_partition_file(&workdir.join(&rel), &f.points)?;
        entries.push(FileEntry {
            path: rel,
            points: f.points.len(),
            group_id: f.group_id,
            sha256,
        });
    }
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        point_count: files.iter().map(|f| f.points.len()).sum(),
        time_range: (lo, hi),
        boundaries: hist.inner().to_vec(),
        m: files.len(),
        k,
        seed,
        sample_rate,
        sample_size: hist.sample_size,
        files: entries,
        ids: table.iter().map(|(h, id)| (format!("{h:016x}"), id.to_string())).collect(),
        quadtree,
    };
    manifest.store(workdir)?;
    Ok(manifest)
}

/// Loads the files listed in a manifest, verifying checksums.
pub fn read_workdir_files(workdir: &Path, manifest: &DatasetManifest) -> Result<Vec<PartitionFile>> {
    let table = manifest.id_table()?;
    let hist = manifest.histogram();
    manifest
        .files
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let points = read_partition_file(&workdir.join(&e.path), &table, Some(&e.sha256))?;
            if points.len() != e.points {
                return Err(Error::Manifest(format!("{} holds {} points, expected {}", e.path.display(), points.len(), e.points)));
            }
            Ok(PartitionFile {
                index: i,
                base: hist.bin_range(i),
                group_id: e.group_id,
                points,
            })
        })
        .collect()
}

/// Appends the fixed-width encoding of a join record and returns its size.
pub fn encode_record(out: &mut Vec<u8>, r: &PairRecord) -> usize {
    let start = out.len();
    put_point(out, &r.ref_point);
    out.push(r.flag as u8);
    match &r.other_point {
        Some(o) => {
            out.push(1);
            put_point(out, o);
        }
        None => out.push(0),
    }
    out.len() - start
}

/// Size of a record's encoding without materialising it.
pub fn encoded_len(r: &PairRecord) -> usize {
    POINT_RECORD_BYTES + 2 + if r.other_point.is_some() { POINT_RECORD_BYTES } else { 0 }
}

pub fn decode_records(bytes: &[u8], ids: &BTreeMap<u64, TrajId>) -> Result<Vec<PairRecord>> {
    let mut out = Vec::new();
    let mut i = 0;
    let bad = || Error::Manifest("truncated record spill".into());
    while i < bytes.len() {
        let ref_point = get_point(bytes.get(i..i + POINT_RECORD_BYTES).ok_or_else(bad)?, ids)?;
        i += POINT_RECORD_BYTES;
        let flag = *bytes.get(i).ok_or_else(bad)? != 0;
        let has_other = *bytes.get(i + 1).ok_or_else(bad)? != 0;
        i += 2;
        let other_point = if has_other {
            let p = get_point(bytes.get(i..i + POINT_RECORD_BYTES).ok_or_else(bad)?, ids)?;
            i += POINT_RECORD_BYTES;
            Some(p)
        } else {
            None
        };
        out.push(PairRecord {
            ref_point,
            other_point,
            flag,
        });
    }
    Ok(out)
}

/// Rows of the result CSV, sorted lexicographically.
pub fn result_rows(matches: &BTreeSet<MatchPair>) -> Vec<String> {
    let mut rows: Vec<String> = matches
        .iter()
        .map(|m| {
            let m = m.clone().canonical();
            format!(
                "{},{},{},{},{},{}",
                m.sub_r.traj_id, m.sub_r.start_t, m.sub_r.end_t, m.sub_s.traj_id, m.sub_s.start_t, m.sub_s.end_t
            )
        })
        .collect();
    rows.sort();
    rows.dedup();
    rows
}

pub const RESULT_HEADER: &str = "traj_a,start_t_a,end_t_a,traj_b,start_t_b,end_t_b";

pub fn write_results(path: &Path, matches: &BTreeSet<MatchPair>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{RESULT_HEADER}")?;
    for row in result_rows(matches) {
        writeln!(w, "{row}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a result CSV back into canonical pairs.
pub fn read_results(path: &Path) -> Result<BTreeSet<MatchPair>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = BTreeSet::new();
    for rec in rdr.deserialize() {
        let (a, sa, ea, b, sb, eb): (String, f64, f64, String, f64, f64) = rec?;
        out.insert(
            MatchPair::new(
                crate::model::Subtrajectory::new(a.as_str(), sa, ea),
                crate::model::Subtrajectory::new(b.as_str(), sb, eb),
            )
            .canonical(),
        );
    }
    Ok(out)
}

/// Hash table covering every trajectory of a point set.
pub(crate) fn spill_ids(points: &[TrajectoryPoint]) -> Result<BTreeMap<u64, TrajId>> {
    let distinct: HashMap<&TrajId, ()> = points.iter().map(|p| (&p.traj_id, ())).collect();
    id_table(distinct.into_keys())
}
