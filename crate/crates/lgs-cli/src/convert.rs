//! Converter from the public Geom-GCN benchmark distribution (the
//! `out1_graph_edges.txt` / `out1_node_feature_label.txt` pair plus
//! `<name>_split_0.6_0.2_<i>.npz` mask archives) into this repository's
//! text layout.
//!
//! The emitted bytes match `tools/convert_datasets.py` exactly, so either
//! tool can regenerate the committed `data/` tree.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::Path;

use anyhow::{bail, Context, Result};
use flate2::read::DeflateDecoder;

/// Verification numbers printed after a conversion.
#[derive(Debug)]
pub struct ConvertStats {
    pub name: String,
    pub nodes: usize,
    pub undirected_edges: usize,
    pub self_loops: usize,
    pub features: usize,
    pub classes: usize,
    pub homophily: f64,
    pub splits_written: usize,
}

// ── Geom-GCN text sources ───────────────────────────────────────────────

struct RawGraph {
    edges: BTreeSet<(usize, usize)>,
    features: Vec<Vec<i64>>,
    labels: Vec<usize>,
}

fn parse_feature_file(path: &Path) -> Result<(Vec<Vec<i64>>, Vec<usize>)> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut rows: Vec<(usize, Vec<i64>, usize)> = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.trim_end().split('\t').collect();
        if parts.len() != 3 {
            bail!(
                "{}:{line_no}: expected node<TAB>features<TAB>label, found {} fields",
                path.display(),
                parts.len()
            );
        }
        let node: usize = parts[0]
            .parse()
            .with_context(|| format!("{}:{line_no}: invalid node id", path.display()))?;
        let mut feats = Vec::new();
        for tok in parts[1].split(',') {
            let v: i64 = tok.parse().with_context(|| {
                format!("{}:{line_no}: invalid feature value {tok:?}", path.display())
            })?;
            feats.push(v);
        }
        let label: usize = parts[2]
            .parse()
            .with_context(|| format!("{}:{line_no}: invalid label", path.display()))?;
        rows.push((node, feats, label));
    }
    let n = rows.len();
    let width = rows.first().map(|(_, f, _)| f.len()).unwrap_or(0);
    let mut features = vec![Vec::new(); n];
    let mut labels = vec![0usize; n];
    let mut seen = vec![false; n];
    for (node, feats, label) in rows {
        if node >= n {
            bail!("{}: node id {node} not in 0..{n}", path.display());
        }
        if seen[node] {
            bail!("{}: duplicate node id {node}", path.display());
        }
        if feats.len() != width {
            bail!("{}: node {node} has {} features, expected {width}", path.display(), feats.len());
        }
        seen[node] = true;
        features[node] = feats;
        labels[node] = label;
    }
    Ok((features, labels))
}

fn parse_edge_file(path: &Path, n: usize) -> Result<BTreeSet<(usize, usize)>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut edges = BTreeSet::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut toks = line.trim_end().split('\t');
        let (Some(u), Some(v)) = (toks.next(), toks.next()) else {
            bail!("{}:{line_no}: expected two tab-separated node ids", path.display());
        };
        let u: usize = u
            .parse()
            .with_context(|| format!("{}:{line_no}: invalid node id", path.display()))?;
        let v: usize = v
            .parse()
            .with_context(|| format!("{}:{line_no}: invalid node id", path.display()))?;
        if u >= n || v >= n {
            bail!("{}:{line_no}: edge ({u}, {v}) outside 0..{n}", path.display());
        }
        edges.insert((u.min(v), u.max(v)));
    }
    Ok(edges)
}

fn load_raw(src_dir: &Path) -> Result<RawGraph> {
    let (features, labels) = parse_feature_file(&src_dir.join("out1_node_feature_label.txt"))?;
    let edges = parse_edge_file(&src_dir.join("out1_graph_edges.txt"), features.len())?;
    Ok(RawGraph { edges, features, labels })
}

// ── NPZ mask archives ───────────────────────────────────────────────────

fn u16le(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32le(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Extract every member of a (small, seekless) zip archive by walking the
/// central directory. Supports stored and deflated entries — all a numpy
/// `savez`/`savez_compressed` archive uses.
fn unzip_all(bytes: &[u8], path: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    const EOCD_SIG: u32 = 0x0605_4b50;
    const CENTRAL_SIG: u32 = 0x0201_4b50;
    const LOCAL_SIG: u32 = 0x0403_4b50;

    if bytes.len() < 22 {
        bail!("{}: too short to be a zip archive", path.display());
    }
    let mut eocd = None;
    let scan_from = bytes.len().saturating_sub(22 + 65_536);
    for at in (scan_from..=bytes.len() - 22).rev() {
        if u32le(bytes, at) == EOCD_SIG {
            eocd = Some(at);
            break;
        }
    }
    let Some(eocd) = eocd else {
        bail!("{}: zip end-of-central-directory signature not found", path.display());
    };
    let entries = u16le(bytes, eocd + 10) as usize;
    let mut at = u32le(bytes, eocd + 16) as usize;

    let mut members = Vec::with_capacity(entries);
    for _ in 0..entries {
        if at + 46 > bytes.len() || u32le(bytes, at) != CENTRAL_SIG {
            bail!("{}: malformed zip central directory", path.display());
        }
        let method = u16le(bytes, at + 10);
        let comp_size = u32le(bytes, at + 20) as usize;
        let raw_size = u32le(bytes, at + 24) as usize;
        let name_len = u16le(bytes, at + 28) as usize;
        let extra_len = u16le(bytes, at + 30) as usize;
        let comment_len = u16le(bytes, at + 32) as usize;
        let local_at = u32le(bytes, at + 42) as usize;
        let name = String::from_utf8_lossy(&bytes[at + 46..at + 46 + name_len]).into_owned();
        at += 46 + name_len + extra_len + comment_len;

        if local_at + 30 > bytes.len() || u32le(bytes, local_at) != LOCAL_SIG {
            bail!("{}: malformed zip local header for {name}", path.display());
        }
        let l_name = u16le(bytes, local_at + 26) as usize;
        let l_extra = u16le(bytes, local_at + 28) as usize;
        let data_at = local_at + 30 + l_name + l_extra;
        if data_at + comp_size > bytes.len() {
            bail!("{}: zip member {name} is truncated", path.display());
        }
        let raw = &bytes[data_at..data_at + comp_size];
        let data = match method {
            0 => raw.to_vec(),
            8 => {
                let mut out = Vec::with_capacity(raw_size);
                DeflateDecoder::new(raw)
                    .read_to_end(&mut out)
                    .with_context(|| format!("{}: inflating {name}", path.display()))?;
                out
            }
            m => bail!("{}: unsupported zip compression method {m} for {name}", path.display()),
        };
        if data.len() != raw_size {
            bail!(
                "{}: {name} decompressed to {} bytes, expected {raw_size}",
                path.display(),
                data.len()
            );
        }
        members.push((name, data));
    }
    Ok(members)
}

/// Parse a 1-D boolean `.npy` payload (dtype `|b1`, C order).
fn parse_bool_npy(bytes: &[u8], what: &str) -> Result<Vec<bool>> {
    if bytes.len() < 10 || &bytes[..6] != b"\x93NUMPY" {
        bail!("{what}: missing npy magic");
    }
    let major = bytes[6];
    let (header_len, header_at) = match major {
        1 => (u16le(bytes, 8) as usize, 10),
        2 | 3 => (u32le(bytes, 8) as usize, 12),
        v => bail!("{what}: unsupported npy format version {v}"),
    };
    let data_at = header_at + header_len;
    if data_at > bytes.len() {
        bail!("{what}: npy header overruns the file");
    }
    let header = std::str::from_utf8(&bytes[header_at..data_at])
        .with_context(|| format!("{what}: npy header is not ASCII"))?;
    let descr = header
        .split("'descr':")
        .nth(1)
        .and_then(|s| s.split('\'').nth(1))
        .unwrap_or("");
    if descr != "|b1" && descr != "|u1" {
        bail!("{what}: expected a boolean/uint8 mask (|b1 or |u1), found {descr:?}");
    }
    if header.contains("'fortran_order': True") {
        bail!("{what}: fortran-ordered arrays are not supported");
    }
    let shape_str = header
        .split("'shape':")
        .nth(1)
        .and_then(|s| s.split('(').nth(1))
        .and_then(|s| s.split(')').next())
        .unwrap_or("");
    let dims: Vec<usize> = shape_str
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<usize>().with_context(|| format!("{what}: bad shape {shape_str:?}")))
        .collect::<Result<_>>()?;
    if dims.len() != 1 {
        bail!("{what}: expected a 1-D mask, found shape ({shape_str})");
    }
    let n = dims[0];
    if bytes.len() - data_at < n {
        bail!("{what}: npy data truncated ({} bytes for {n} entries)", bytes.len() - data_at);
    }
    Ok(bytes[data_at..data_at + n].iter().map(|&b| b != 0).collect())
}

/// Read train/val/test masks out of one `.npz` archive.
pub fn read_split_npz(path: &Path) -> Result<(Vec<bool>, Vec<bool>, Vec<bool>)> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let members = unzip_all(&bytes, path)?;
    let find = |name: &str| -> Result<Vec<bool>> {
        let member = members
            .iter()
            .find(|(n, _)| n == &format!("{name}.npy"))
            .with_context(|| format!("{}: no member {name}.npy", path.display()))?;
        parse_bool_npy(&member.1, &format!("{}:{name}.npy", path.display()))
    };
    Ok((find("train_mask")?, find("val_mask")?, find("test_mask")?))
}

// ── emission (byte-compatible with tools/convert_datasets.py) ───────────

fn write_graph_files(out: &Path, name: &str, raw: &RawGraph) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;

    let mut edges_txt =
        format!("# {name}: undirected edges, one per line, listed once\n");
    for &(u, v) in &raw.edges {
        let _ = writeln!(edges_txt, "{u} {v}");
    }
    fs::write(out.join("edges.txt"), edges_txt)?;

    let d = raw.features.first().map(Vec::len).unwrap_or(0);
    let mut features_txt = format!("# {name}: node-id followed by {d} feature values\n");
    for (i, row) in raw.features.iter().enumerate() {
        let _ = write!(features_txt, "{i}");
        for v in row {
            let _ = write!(features_txt, " {v}");
        }
        features_txt.push('\n');
    }
    fs::write(out.join("features.txt"), features_txt)?;

    let mut labels_txt = format!("# {name}: node-id followed by class index\n");
    for (i, y) in raw.labels.iter().enumerate() {
        let _ = writeln!(labels_txt, "{i} {y}");
    }
    fs::write(out.join("labels.txt"), labels_txt)?;
    Ok(())
}

fn write_split_file(
    out: &Path,
    name: &str,
    split_id: usize,
    masks: &(Vec<bool>, Vec<bool>, Vec<bool>),
    n: usize,
) -> Result<()> {
    let (tr, va, te) = masks;
    for (role, mask) in [("train", tr), ("val", va), ("test", te)] {
        if mask.len() != n {
            bail!("split {split_id}: {role} mask covers {} nodes, graph has {n}", mask.len());
        }
    }
    for i in 0..n {
        if (tr[i] && va[i]) || (tr[i] && te[i]) || (va[i] && te[i]) {
            bail!("split {split_id}: node {i} assigned to more than one role");
        }
    }
    let mut text = format!("# {name} split {split_id}: node-id then train|val|test\n");
    for i in 0..n {
        if tr[i] {
            let _ = writeln!(text, "{i} train");
        } else if va[i] {
            let _ = writeln!(text, "{i} val");
        } else if te[i] {
            let _ = writeln!(text, "{i} test");
        }
    }
    fs::write(out.join(format!("split_{split_id}.txt")), text)?;
    Ok(())
}

/// Convert one dataset. `src_dir` holds the two `out1_*` files;
/// `splits_dir`, when given, holds `<name>_split_0.6_0.2_<i>.npz` for
/// `i` in 0..=9. Output lands in `<out_dir>/<name>/`.
pub fn convert(
    name: &str,
    src_dir: &Path,
    splits_dir: Option<&Path>,
    out_dir: &Path,
) -> Result<ConvertStats> {
    let raw = load_raw(src_dir)?;
    let n = raw.features.len();
    let out = out_dir.join(name);
    write_graph_files(&out, name, &raw)?;

    let mut splits_written = 0;
    if let Some(dir) = splits_dir {
        for i in 0..10 {
            let npz = dir.join(format!("{name}_split_0.6_0.2_{i}.npz"));
            let masks = read_split_npz(&npz)?;
            write_split_file(&out, name, i, &masks, n)?;
            splits_written += 1;
        }
    }

    let edges: Vec<(usize, usize)> = raw.edges.iter().copied().collect();
    let profile = lgs_core::graph::homophily(n, &edges, &raw.labels);
    let mut classes: Vec<usize> = raw.labels.clone();
    classes.sort_unstable();
    classes.dedup();
    Ok(ConvertStats {
        name: name.to_string(),
        nodes: n,
        undirected_edges: raw.edges.len(),
        self_loops: raw.edges.iter().filter(|(u, v)| u == v).count(),
        features: raw.features.first().map(Vec::len).unwrap_or(0),
        classes: classes.len(),
        homophily: profile.edge_fraction,
        splits_written,
    })
}
