use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{Member, MeshInfo, Provenance, SetKind, SetMeta, SnapshotBlock, SnapshotSet, Tier};
use crate::error::{Error, Result};
use crate::mesh::{BcKind, Field};
use crate::model::ParamPoint;

const MAGIC: &[u8] = b"PODSNAP1\n";
const FORMAT_VERSION: &str = "1";

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

pub(crate) fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Parses `key=value` lines, skipping blanks and `#` comments.
pub(crate) fn parse_manifest(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format_err(path, format!("line without '=': {line}")))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub(crate) fn get<'a>(
    map: &'a BTreeMap<String, String>,
    key: &str,
    path: &Path,
) -> Result<&'a str> {
    map.get(key)
        .map(String::as_str)
        .ok_or_else(|| format_err(path, format!("missing key {key}")))
}

pub(crate) fn get_parse<T: std::str::FromStr>(
    map: &BTreeMap<String, String>,
    key: &str,
    path: &Path,
) -> Result<T> {
    get(map, key, path)?
        .parse()
        .map_err(|_| format_err(path, format!("bad value for {key}")))
}

pub(crate) fn parse_list(s: &str, path: &Path) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| format_err(path, format!("bad number {v}")))
        })
        .collect()
}

fn param_str(p: &ParamPoint) -> String {
    match p.beta2 {
        Some(b) => format!("{}/{}", fmt17(p.alpha), fmt17(b)),
        None => fmt17(p.alpha),
    }
}

fn parse_param(s: &str, path: &Path) -> Result<ParamPoint> {
    let bad = || format_err(path, format!("bad parameter {s}"));
    match s.split_once('/') {
        Some((a, b)) => Ok(ParamPoint::two(
            a.parse().map_err(|_| bad())?,
            b.parse().map_err(|_| bad())?,
        )),
        None => Ok(ParamPoint::one(s.parse().map_err(|_| bad())?)),
    }
}

pub(crate) fn write_matrix_bin(magic: &[u8], rows: &[&[f64]], len: usize) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(magic.len() + 8 + 8 * rows.len() * len);
    bytes.extend_from_slice(magic);
    bytes.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&(len as u32).to_le_bytes());
    for r in rows {
        for v in r.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

pub(crate) fn read_matrix_bin(magic: &[u8], bytes: &[u8], path: &Path) -> Result<Vec<Vec<f64>>> {
    if !bytes.starts_with(magic) {
        return Err(format_err(path, "bad magic"));
    }
    let rest = &bytes[magic.len()..];
    if rest.len() < 8 {
        return Err(format_err(path, "truncated header"));
    }
    let count = u32::from_le_bytes(rest[0..4].try_into().expect("4 bytes")) as usize;
    let len = u32::from_le_bytes(rest[4..8].try_into().expect("4 bytes")) as usize;
    let body = &rest[8..];
    if body.len() != 8 * count * len {
        return Err(format_err(path, "payload size does not match header"));
    }
    Ok(body
        .chunks_exact(8 * len.max(1))
        .take(count)
        .map(|row| {
            row.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect()
        })
        .collect())
}

/// Appends the `key=value` lines describing `meta`.
pub(crate) fn write_meta(meta: &SetMeta, man: &mut String) {
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(man, "{k}={v}");
    };
    kv("kind", meta.kind.as_str().into());
    if let Some(mesh) = &meta.mesh {
        kv("n_elems", mesh.n_elems.to_string());
        kv(
            "domain",
            format!("{},{}", fmt17(mesh.domain.0), fmt17(mesh.domain.1)),
        );
        kv(
            "bc",
            format!("{},{}", mesh.left.as_str(), mesh.right.as_str()),
        );
    }
    kv("n_components", meta.components.to_string());
    kv("M", meta.m.to_string());
    kv("L", meta.l.to_string());
    kv("S", meta.s.to_string());
    kv(
        "params",
        meta.params
            .iter()
            .map(param_str)
            .collect::<Vec<_>>()
            .join(","),
    );
    kv(
        "periods",
        meta.periods
            .iter()
            .map(|v| fmt17(*v))
            .collect::<Vec<_>>()
            .join(","),
    );
    kv("dalpha", fmt17(meta.dalpha));
    kv("dbeta", fmt17(meta.dbeta));
    kv("weights", meta.kind.weights_policy().into());
    for (k, v) in &meta.extra {
        kv(&format!("extra.{k}"), v.replace('\n', " "));
    }
}

/// Writes `set` into directory `dir` (created if needed).
pub fn save_set(set: &SnapshotSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let len = set.dof_len();
    let rows: Vec<&[f64]> = set
        .members
        .iter()
        .map(|m| m.field.coeffs().as_slice())
        .collect();
    let states = write_matrix_bin(MAGIC, &rows, len);

    let mut prov = String::from("index,tier,j,l,k,weight\n");
    for (i, m) in set.members.iter().enumerate() {
        let p = &m.provenance;
        let _ = writeln!(
            prov,
            "{i},{},{},{},{},{}",
            p.tier,
            p.j,
            p.l,
            p.k,
            fmt17(p.weight)
        );
    }

    let mut man = String::new();
    let _ = writeln!(man, "format_version={FORMAT_VERSION}");
    write_meta(&set.meta, &mut man);
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(man, "{k}={v}");
    };
    kv("count", set.len().to_string());
    kv("dof_length", len.to_string());
    kv("states_sha256", sha256_hex(&states));
    kv("provenance_sha256", sha256_hex(prov.as_bytes()));

    fs::write(dir.join("states.bin"), &states)?;
    fs::write(dir.join("provenance.csv"), prov)?;
    fs::write(dir.join("manifest.txt"), man)?;
    Ok(())
}

fn bc_pair(s: &str, path: &Path) -> Result<(BcKind, BcKind)> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format_err(path, "bad bc"))?;
    match (BcKind::parse(a.trim()), BcKind::parse(b.trim())) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(format_err(path, format!("bad bc {s}"))),
    }
}

/// Reads a set written by [`save_set`], verifying checksums.
pub fn load_set(dir: &Path) -> Result<SnapshotSet> {
    let man_path = dir.join("manifest.txt");
    let man = parse_manifest(&man_path)?;
    if get(&man, "format_version", &man_path)? != FORMAT_VERSION {
        return Err(format_err(&man_path, "unsupported format version"));
    }
    let states_path: PathBuf = dir.join("states.bin");
    let states = fs::read(&states_path)?;
    if sha256_hex(&states) != get(&man, "states_sha256", &man_path)? {
        return Err(Error::Checksum(states_path));
    }
    let prov_path = dir.join("provenance.csv");
    let prov = fs::read_to_string(&prov_path)?;
    if sha256_hex(prov.as_bytes()) != get(&man, "provenance_sha256", &man_path)? {
        return Err(Error::Checksum(prov_path));
    }
    let rows = read_matrix_bin(MAGIC, &states, &states_path)?;
    let components: usize = get_parse(&man, "n_components", &man_path)?;

    let mut provs = Vec::with_capacity(rows.len());
    for line in prov.lines().skip(1).filter(|l| !l.is_empty()) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            return Err(format_err(&prov_path, format!("bad row {line}")));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| format_err(&prov_path, format!("bad index {s}")))
        };
        provs.push(Provenance {
            tier: Tier::parse(cols[1]).ok_or_else(|| format_err(&prov_path, "bad tier"))?,
            j: num(cols[2])?,
            l: num(cols[3])?,
            k: num(cols[4])?,
            weight: cols[5]
                .parse()
                .map_err(|_| format_err(&prov_path, "bad weight"))?,
        });
    }
    if provs.len() != rows.len() {
        return Err(format_err(&prov_path, "row count differs from states.bin"));
    }
    let members = rows
        .into_iter()
        .zip(provs)
        .map(|(r, p)| {
            Ok(Member {
                field: Field::from_vec(components, r)?,
                provenance: p,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let meta = read_meta(&man, &man_path)?;
    Ok(SnapshotSet { meta, members })
}

/// Parses the metadata lines written by [`write_meta`].
pub(crate) fn read_meta(man: &BTreeMap<String, String>, man_path: &Path) -> Result<SetMeta> {
    let mesh = match man.get("n_elems") {
        Some(_) => {
            let d = parse_list(get(man, "domain", man_path)?, man_path)?;
            if d.len() != 2 {
                return Err(format_err(man_path, "bad domain"));
            }
            let (left, right) = bc_pair(get(man, "bc", man_path)?, man_path)?;
            Some(MeshInfo {
                n_elems: get_parse(man, "n_elems", man_path)?,
                domain: (d[0], d[1]),
                left,
                right,
            })
        }
        None => None,
    };
    let params = get(man, "params", man_path)?
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| parse_param(s.trim(), man_path))
        .collect::<Result<Vec<_>>>()?;
    let extra = man
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("extra.").map(|k| (k.to_string(), v.clone())))
        .collect();
    Ok(SetMeta {
        kind: SetKind::parse(get(man, "kind", man_path)?)
            .ok_or_else(|| format_err(man_path, "bad kind"))?,
        m: get_parse(man, "M", man_path)?,
        l: get_parse(man, "L", man_path)?,
        s: get_parse(man, "S", man_path)?,
        params,
        periods: parse_list(get(man, "periods", man_path)?, man_path)?,
        dalpha: get_parse(man, "dalpha", man_path)?,
        dbeta: get_parse(man, "dbeta", man_path)?,
        components: get_parse(man, "n_components", man_path)?,
        mesh,
        extra,
    })
}

const BLOCK_MAGIC: &[u8] = b"PODBLCK1\n";

/// Writes one orbit block into `dir`. `extra` lines are stored as
/// `extra.<key>=<value>` and returned by [`load_block`].
pub fn save_block(
    block: &SnapshotBlock,
    dir: &Path,
    extra: &BTreeMap<String, String>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let len = block.states[0].len();
    let rows: Vec<&[f64]> = block.states.iter().map(|s| s.coeffs().as_slice()).collect();
    let states = write_matrix_bin(BLOCK_MAGIC, &rows, len);
    let derivs = block.derivatives.as_ref().map(|d| {
        let rows: Vec<&[f64]> = d.iter().map(|s| s.coeffs().as_slice()).collect();
        write_matrix_bin(BLOCK_MAGIC, &rows, len)
    });

    let mut man = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(man, "{k}={v}");
    };
    kv("format_version", FORMAT_VERSION.into());
    kv("param", param_str(&block.param));
    kv("period", fmt17(block.period));
    kv("M", block.m().to_string());
    kv("n_components", block.states[0].components().to_string());
    kv("dof_length", len.to_string());
    kv("states_sha256", sha256_hex(&states));
    if let Some(d) = &derivs {
        kv("derivatives_sha256", sha256_hex(d));
    }
    for (k, v) in extra {
        kv(&format!("extra.{k}"), v.replace('\n', " "));
    }

    fs::write(dir.join("states.bin"), &states)?;
    match &derivs {
        Some(d) => fs::write(dir.join("derivatives.bin"), d)?,
        None => {
            let _ = fs::remove_file(dir.join("derivatives.bin"));
        }
    }
    fs::write(dir.join("manifest.txt"), man)?;
    Ok(())
}

fn read_fields(path: &Path, expected_sha: &str, components: usize) -> Result<Vec<Field>> {
    let bytes = fs::read(path)?;
    if sha256_hex(&bytes) != expected_sha {
        return Err(Error::Checksum(path.to_path_buf()));
    }
    read_matrix_bin(BLOCK_MAGIC, &bytes, path)?
        .into_iter()
        .map(|r| Field::from_vec(components, r))
        .collect()
}

/// Reads a block written by [`save_block`], verifying checksums.
pub fn load_block(dir: &Path) -> Result<(SnapshotBlock, BTreeMap<String, String>)> {
    let man_path = dir.join("manifest.txt");
    let man = parse_manifest(&man_path)?;
    if get(&man, "format_version", &man_path)? != FORMAT_VERSION {
        return Err(format_err(&man_path, "unsupported format version"));
    }
    let components: usize = get_parse(&man, "n_components", &man_path)?;
    let states = read_fields(
        &dir.join("states.bin"),
        get(&man, "states_sha256", &man_path)?,
        components,
    )?;
    let derivatives = match man.get("derivatives_sha256") {
        Some(sha) => Some(read_fields(&dir.join("derivatives.bin"), sha, components)?),
        None => None,
    };
    let m: usize = get_parse(&man, "M", &man_path)?;
    if states.len() != m + 1 {
        return Err(format_err(&man_path, "state count does not match M"));
    }
    let block = SnapshotBlock::new(
        parse_param(get(&man, "param", &man_path)?, &man_path)?,
        get_parse(&man, "period", &man_path)?,
        states,
        derivatives,
    )?;
    let extra = man
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("extra.").map(|k| (k.to_string(), v.clone())))
        .collect();
    Ok((block, extra))
}
