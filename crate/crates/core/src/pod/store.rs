use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::{tail, PodBasis, PodEigen};
use crate::error::{Error, Result};
use crate::snapshots::store::{
    fmt17, format_err, get, get_parse, parse_manifest, read_matrix_bin, read_meta, sha256_hex,
    write_matrix_bin, write_meta,
};

const MAGIC: &[u8] = b"PODBASE1\n";
const SPECTRUM_MAGIC: &[u8] = b"PODSPEC1\n";
const FORMAT_VERSION: &str = "1";

fn columns_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter()
        .map(|c| c.iter().copied().collect())
        .collect()
}

fn matrix_from_columns(cols: &[Vec<f64>], rows: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols.len(), |i, j| cols[j][i])
}

/// Writes the basis into `dir`: modes, spectrum, `S` eigenvectors and a
/// manifest with the source-set metadata and checksums.
pub fn save_basis(basis: &PodBasis, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let modes = columns_of(&basis.modes);
    let mode_rows: Vec<&[f64]> = modes.iter().map(Vec::as_slice).collect();
    let modes_bin = write_matrix_bin(MAGIC, &mode_rows, basis.dim());
    let eig = &basis.eigen;
    let spectrum_bin =
        write_matrix_bin(SPECTRUM_MAGIC, &[eig.lambdas.as_slice()], eig.lambdas.len());
    let vecs = columns_of(&eig.eigvecs);
    let vec_rows: Vec<&[f64]> = vecs.iter().map(Vec::as_slice).collect();
    let eigvecs_bin = write_matrix_bin(SPECTRUM_MAGIC, &vec_rows, eig.eigvecs.nrows());

    let mut man = String::new();
    let _ = writeln!(man, "format_version={FORMAT_VERSION}");
    write_meta(basis.source(), &mut man);
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(man, "{k}={v}");
    };
    kv("n_members", basis.n_members.to_string());
    kv("d_r", eig.d_r.to_string());
    kv("drop_threshold", fmt17(eig.drop_threshold));
    kv("gram_correction", fmt17(basis.gram_correction));
    kv("dof_length", basis.dim().to_string());
    kv("modes_sha256", sha256_hex(&modes_bin));
    kv("spectrum_sha256", sha256_hex(&spectrum_bin));
    kv("eigvecs_sha256", sha256_hex(&eigvecs_bin));

    fs::write(dir.join("modes.bin"), &modes_bin)?;
    fs::write(dir.join("spectrum.bin"), &spectrum_bin)?;
    fs::write(dir.join("eigvecs.bin"), &eigvecs_bin)?;
    fs::write(dir.join("spectrum.csv"), spectrum_csv(eig))?;
    fs::write(dir.join("manifest.txt"), man)?;
    Ok(())
}

fn read_checked(dir: &Path, name: &str, expected: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    let bytes = fs::read(&path)?;
    if sha256_hex(&bytes) != expected {
        return Err(Error::Checksum(path));
    }
    Ok(bytes)
}

/// Reads a basis written by [`save_basis`]. The geometry is rebuilt from the
/// mesh recorded in the manifest.
pub fn load_basis(dir: &Path) -> Result<PodBasis> {
    let man_path = dir.join("manifest.txt");
    let man = parse_manifest(&man_path)?;
    if get(&man, "format_version", &man_path)? != FORMAT_VERSION {
        return Err(format_err(&man_path, "unsupported format version"));
    }
    let source = read_meta(&man, &man_path)?;
    let space = source
        .mesh
        .as_ref()
        .ok_or_else(|| format_err(&man_path, "basis manifest has no mesh"))?
        .to_space()?;
    let len: usize = get_parse(&man, "dof_length", &man_path)?;
    let d_r: usize = get_parse(&man, "d_r", &man_path)?;

    let modes_bin = read_checked(dir, "modes.bin", get(&man, "modes_sha256", &man_path)?)?;
    let modes = read_matrix_bin(MAGIC, &modes_bin, &dir.join("modes.bin"))?;
    let spec_bin = read_checked(
        dir,
        "spectrum.bin",
        get(&man, "spectrum_sha256", &man_path)?,
    )?;
    let lambdas = read_matrix_bin(SPECTRUM_MAGIC, &spec_bin, &dir.join("spectrum.bin"))?
        .pop()
        .ok_or_else(|| format_err(&dir.join("spectrum.bin"), "empty spectrum"))?;
    let vec_bin = read_checked(dir, "eigvecs.bin", get(&man, "eigvecs_sha256", &man_path)?)?;
    let vecs = read_matrix_bin(SPECTRUM_MAGIC, &vec_bin, &dir.join("eigvecs.bin"))?;
    let n_members: usize = get_parse(&man, "n_members", &man_path)?;

    if modes.len() != d_r || modes.iter().any(|c| c.len() != len) || vecs.len() != d_r {
        return Err(format_err(&man_path, "stored arrays do not match d_r"));
    }
    let eigen = PodEigen {
        lambdas,
        eigvecs: matrix_from_columns(&vecs, n_members),
        d_r,
        drop_threshold: get_parse(&man, "drop_threshold", &man_path)?,
    };
    PodBasis::from_parts(
        matrix_from_columns(&modes, len),
        eigen,
        source,
        n_members,
        get_parse(&man, "gram_correction", &man_path)?,
        &space,
    )
}

/// `r, lambda_r, sum_{k>r} lambda_k` for `r = 1..`, nine significant digits.
pub fn spectrum_csv(eigen: &PodEigen) -> String {
    let mut out = String::from("r,lambda,tail_sq\n");
    for (i, l) in eigen.lambdas.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{:.8e},{:.8e}",
            i + 1,
            l,
            tail(eigen, i + 1).sigma_sq
        );
    }
    out
}
