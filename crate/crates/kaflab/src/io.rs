//! Plain-text file formats.
//!
//! All numbers are written as `{:.16e}` (17 significant digits), which reads
//! back to the identical `f64`. Files are UTF-8 with LF line endings and a
//! mandatory header line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use kaflab_core::kernel::{Dictionary, GaussianKernel};
use kaflab_core::linalg::SymMatrix;
use kaflab_core::moments::{InputModel, MomentModel, Tensor4};
use kaflab_core::sim::{CurveKind, LearningCurve};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MOMENTS_FORMAT: &str = "kaflab-moments-1";
pub const CACHE_FORMAT: &str = "kaflab-moment-cache-1";

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Non-empty lines with their 1-based numbers.
fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_fields(path: &Path, line: usize, row: &str, width: usize) -> Result<Vec<f64>> {
    let fields: Vec<&str> = row.split(',').map(str::trim).collect();
    if fields.len() != width {
        return Err(Error::format(path, line, format!("expected {width} fields, found {}", fields.len())));
    }
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::format(path, line, format!("not a finite number: `{f}`")))
        })
        .collect()
}

fn parse_index(path: &Path, line: usize, v: f64, bound: usize) -> Result<usize> {
    if v.fract() != 0.0 || v < 0.0 || v >= bound as f64 {
        return Err(Error::format(path, line, format!("index {v} out of range 0..{bound}")));
    }
    Ok(v as usize)
}

// ---- dictionary ----

pub fn dictionary_csv(d: &Dictionary) -> String {
    let header: Vec<String> = (0..d.input_dim()).map(|a| format!("x{a}")).collect();
    let mut s = header.join(",");
    s.push('\n');
    for c in d.centers() {
        let row: Vec<String> = c.iter().map(|&v| fmt_f64(v)).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn parse_dictionary(path: &Path, text: &str) -> Result<Dictionary> {
    let mut lines = numbered_lines(text);
    let (hline, header) = lines.next().ok_or_else(|| Error::format(path, 1, "empty dictionary file"))?;
    let width = header.split(',').count();
    let want: Vec<String> = (0..width).map(|a| format!("x{a}")).collect();
    if header.split(',').map(str::trim).ne(want.iter().map(String::as_str)) {
        return Err(Error::format(path, hline, format!("expected header `{}`", want.join(","))));
    }
    let rows = lines
        .map(|(n, l)| parse_fields(path, n, l, width))
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Err(Error::format(path, hline, "dictionary has no centers"));
    }
    Ok(Dictionary::new(&rows)?)
}

pub fn read_dictionary(path: &Path) -> Result<Dictionary> {
    parse_dictionary(path, &read_text(path)?)
}

// ---- learning curves ----

pub fn curve_csv(c: &LearningCurve) -> String {
    let mut s = String::with_capacity(32 * (c.len() + 1));
    s.push_str("n,mse\n");
    for (n, v) in c.mse.iter().enumerate() {
        let _ = writeln!(s, "{n},{}", fmt_f64(*v));
    }
    s
}

/// Reads `n,mse`. Rows must be numbered consecutively from 0. Non-finite
/// values are accepted, since a diverging theoretical curve is a result.
pub fn parse_curve(path: &Path, text: &str, kind: CurveKind) -> Result<LearningCurve> {
    let mut lines = numbered_lines(text);
    match lines.next() {
        Some((_, "n,mse")) => {}
        Some((n, _)) => return Err(Error::format(path, n, "expected header `n,mse`")),
        None => return Err(Error::format(path, 1, "empty curve file")),
    }
    let mut mse = Vec::new();
    for (line, row) in lines {
        let (n, v) = row
            .split_once(',')
            .ok_or_else(|| Error::format(path, line, "expected `n,mse`"))?;
        let n: usize = n
            .trim()
            .parse()
            .map_err(|_| Error::format(path, line, format!("bad iteration index `{n}`")))?;
        if n != mse.len() {
            return Err(Error::format(path, line, format!("expected n = {}, found {n}", mse.len())));
        }
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::format(path, line, format!("bad mse value `{v}`")))?;
        mse.push(v);
    }
    Ok(LearningCurve { mse, n_runs: 0, kind })
}

pub fn read_curve(path: &Path, kind: CurveKind) -> Result<LearningCurve> {
    parse_curve(path, &read_text(path)?, kind)
}

// ---- block files ----

/// Header line number and numbered rows of one block.
type Block<'t> = (usize, Vec<(usize, &'t str)>);

/// `[name]` blocks of CSV rows, each block starting with a header row.
struct Blocks<'t> {
    blocks: BTreeMap<String, Block<'t>>,
}

impl<'t> Blocks<'t> {
    fn parse(path: &Path, text: &'t str) -> Result<Self> {
        let mut blocks: BTreeMap<String, Block<'t>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (n, l) in numbered_lines(text) {
            if let Some(name) = l.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                if blocks.contains_key(name) {
                    return Err(Error::format(path, n, format!("duplicate block [{name}]")));
                }
                blocks.insert(name.to_string(), (n, Vec::new()));
                current = Some(name.to_string());
            } else {
                let name = current
                    .as_ref()
                    .ok_or_else(|| Error::format(path, n, "data before the first block header"))?;
                blocks.get_mut(name).expect("block exists").1.push((n, l));
            }
        }
        Ok(Blocks { blocks })
    }

    /// Rows of block `name` after checking its header.
    fn rows(&self, path: &Path, name: &str, header: &str) -> Result<&[(usize, &'t str)]> {
        let (at, rows) = self
            .blocks
            .get(name)
            .ok_or_else(|| Error::format(path, 0, format!("missing block [{name}]")))?;
        match rows.first() {
            Some((_, h)) if *h == header => Ok(&rows[1..]),
            Some((n, _)) => Err(Error::format(path, *n, format!("block [{name}] must start with `{header}`"))),
            None => Err(Error::format(path, *at, format!("block [{name}] is empty"))),
        }
    }

    fn meta(&self, path: &Path) -> Result<BTreeMap<String, (usize, String)>> {
        let mut out = BTreeMap::new();
        for (n, row) in self.rows(path, "meta", "key,value")? {
            let (k, v) = row
                .split_once(',')
                .ok_or_else(|| Error::format(path, *n, "expected `key,value`"))?;
            out.insert(k.trim().to_string(), (*n, v.trim().to_string()));
        }
        Ok(out)
    }
}

fn meta_get<'m>(path: &Path, meta: &'m BTreeMap<String, (usize, String)>, key: &str) -> Result<(usize, &'m str)> {
    meta.get(key)
        .map(|(n, v)| (*n, v.as_str()))
        .ok_or_else(|| Error::format(path, 0, format!("missing meta key `{key}`")))
}

fn meta_f64(path: &Path, meta: &BTreeMap<String, (usize, String)>, key: &str) -> Result<f64> {
    let (n, v) = meta_get(path, meta, key)?;
    v.parse()
        .ok()
        .filter(|x: &f64| x.is_finite())
        .ok_or_else(|| Error::format(path, n, format!("`{key}` is not a finite number")))
}

fn meta_usize(path: &Path, meta: &BTreeMap<String, (usize, String)>, key: &str) -> Result<usize> {
    let (n, v) = meta_get(path, meta, key)?;
    v.parse()
        .map_err(|_| Error::format(path, n, format!("`{key}` is not a non-negative integer")))
}

fn push_sym(s: &mut String, name: &str, m: &SymMatrix) {
    let _ = writeln!(s, "[{name}]\ni,j,value");
    for i in 0..m.dim() {
        for j in i..m.dim() {
            let _ = writeln!(s, "{i},{j},{}", fmt_f64(m[(i, j)]));
        }
    }
}

fn read_sym(path: &Path, b: &Blocks<'_>, name: &str, dim: usize) -> Result<SymMatrix> {
    let rows = b.rows(path, name, "i,j,value")?;
    let mut vals = vec![None; dim * dim];
    for (n, row) in rows {
        let f = parse_fields(path, *n, row, 3)?;
        let (i, j) = (parse_index(path, *n, f[0], dim)?, parse_index(path, *n, f[1], dim)?);
        if i > j {
            return Err(Error::format(path, *n, "only upper-triangle entries (i <= j) are stored"));
        }
        if vals[i * dim + j].replace(f[2]).is_some() {
            return Err(Error::format(path, *n, format!("entry ({i},{j}) given twice")));
        }
    }
    if let Some(k) = vals.iter().enumerate().position(|(k, v)| k / dim <= k % dim && v.is_none()) {
        return Err(Error::format(path, 0, format!("[{name}] lacks entry ({},{})", k / dim, k % dim)));
    }
    Ok(SymMatrix::from_upper_fn(dim, |i, j| vals[i * dim + j].unwrap_or(0.0)))
}

fn push_tensor(s: &mut String, t: &Tensor4) {
    let _ = writeln!(s, "[s_tensor]\ni,j,s,t,value");
    Tensor4::for_each_multiset(t.dim(), |[i, j, a, b]| {
        let _ = writeln!(s, "{i},{j},{a},{b},{}", fmt_f64(t.get(i, j, a, b)));
    });
}

fn read_tensor(path: &Path, b: &Blocks<'_>, dim: usize) -> Result<Tensor4> {
    let rows = b.rows(path, "s_tensor", "i,j,s,t,value")?;
    let mut t = Tensor4::zeros(dim)?;
    let mut seen = std::collections::BTreeSet::new();
    for (n, row) in rows {
        let f = parse_fields(path, *n, row, 5)?;
        let mut idx = [0usize; 4];
        for (k, slot) in idx.iter_mut().enumerate() {
            *slot = parse_index(path, *n, f[k], dim)?;
        }
        if idx.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::format(path, *n, "tensor indices must be non-decreasing"));
        }
        if !seen.insert(idx) {
            return Err(Error::format(path, *n, format!("entry {idx:?} given twice")));
        }
        t.set_all_permutations(idx, f[4]);
    }
    let mut expected = 0usize;
    Tensor4::for_each_multiset(dim, |_| expected += 1);
    if seen.len() != expected {
        return Err(Error::format(path, 0, format!("[s_tensor] has {} of {expected} entries", seen.len())));
    }
    Ok(t)
}

fn push_dictionary(s: &mut String, d: &Dictionary) {
    s.push_str("[dictionary]\n");
    s.push_str(&dictionary_csv(d));
}

fn read_dictionary_block(path: &Path, b: &Blocks<'_>, input_dim: usize) -> Result<Dictionary> {
    let header: Vec<String> = (0..input_dim).map(|a| format!("x{a}")).collect();
    let rows = b.rows(path, "dictionary", &header.join(","))?;
    let centers = rows
        .iter()
        .map(|(n, r)| parse_fields(path, *n, r, input_dim))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dictionary::new(&centers)?)
}

// ---- moment model ----

/// Serializes the primary quantities of a model. Derived quantities are
/// recomputed deterministically on load.
pub fn moment_model_text(m: &MomentModel) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "[meta]\nkey,value\nformat,{MOMENTS_FORMAT}");
    let _ = writeln!(s, "sigma,{}", fmt_f64(m.kernel.sigma()));
    let _ = writeln!(s, "r,{}\ninput_dim,{}", m.dim(), m.dictionary.input_dim());
    let _ = writeln!(s, "d2,{}", fmt_f64(m.d2));
    push_dictionary(&mut s, &m.dictionary);
    push_sym(&mut s, "r_u", m.input.r_u());
    push_sym(&mut s, "r_kappa", &m.r_kappa);
    let _ = writeln!(s, "[p]\ni,value");
    for (i, v) in m.p.iter().enumerate() {
        let _ = writeln!(s, "{i},{}", fmt_f64(*v));
    }
    push_tensor(&mut s, &m.s_tensor);
    s
}

pub fn parse_moment_model(path: &Path, text: &str) -> Result<MomentModel> {
    let b = Blocks::parse(path, text)?;
    let meta = b.meta(path)?;
    let (n, format) = meta_get(path, &meta, "format")?;
    if format != MOMENTS_FORMAT {
        return Err(Error::format(path, n, format!("unsupported format `{format}`")));
    }
    let sigma = meta_f64(path, &meta, "sigma")?;
    let r = meta_usize(path, &meta, "r")?;
    let input_dim = meta_usize(path, &meta, "input_dim")?;
    let d2 = meta_f64(path, &meta, "d2")?;
    let dictionary = read_dictionary_block(path, &b, input_dim)?;
    if dictionary.len() != r {
        return Err(Error::format(path, 0, format!("meta says r = {r} but the dictionary has {}", dictionary.len())));
    }
    let r_u = read_sym(path, &b, "r_u", input_dim)?;
    let r_kappa = read_sym(path, &b, "r_kappa", r)?;
    let mut p = vec![None; r];
    for (n, row) in b.rows(path, "p", "i,value")? {
        let f = parse_fields(path, *n, row, 2)?;
        let i = parse_index(path, *n, f[0], r)?;
        if p[i].replace(f[1]).is_some() {
            return Err(Error::format(path, *n, format!("p[{i}] given twice")));
        }
    }
    let p = p
        .into_iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| Error::format(path, 0, format!("[p] lacks entry {i}"))))
        .collect::<Result<Vec<_>>>()?;
    let s = read_tensor(path, &b, r)?;
    Ok(MomentModel::from_parts(
        dictionary,
        GaussianKernel::new(sigma)?,
        InputModel::new(r_u)?,
        r_kappa,
        s,
        p,
        d2,
    )?)
}

pub fn read_moment_model(path: &Path) -> Result<MomentModel> {
    parse_moment_model(path, &read_text(path)?)
}

// ---- moment cache ----

/// Content key of the input-only moments: SHA-256 over the bit patterns of
/// the dictionary, the kernel width and the input covariance.
pub fn moment_cache_key(d: &Dictionary, k: &GaussianKernel, im: &InputModel) -> String {
    let mut h = Sha256::new();
    h.update(b"kaflab-moments\0");
    for n in [d.len(), d.input_dim()] {
        h.update((n as u64).to_le_bytes());
    }
    for c in d.centers() {
        for v in c {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    h.update(k.sigma().to_bits().to_le_bytes());
    let r_u = im.r_u();
    for i in 0..r_u.dim() {
        for j in i..r_u.dim() {
            h.update(r_u[(i, j)].to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Input-only moments `R_kappa` and `S`, stored under their content key.
#[derive(Clone, Debug, PartialEq)]
pub struct CachedMoments {
    pub r_kappa: SymMatrix,
    pub s_tensor: Tensor4,
}

pub fn cache_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("{key}.moments"))
}

pub fn cache_text(key: &str, m: &CachedMoments) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "[meta]\nkey,value\nformat,{CACHE_FORMAT}\nkey,{key}\nr,{}", m.r_kappa.dim());
    push_sym(&mut s, "r_kappa", &m.r_kappa);
    push_tensor(&mut s, &m.s_tensor);
    s
}

pub fn parse_cache(path: &Path, text: &str, key: &str) -> Result<CachedMoments> {
    let b = Blocks::parse(path, text)?;
    let meta = b.meta(path)?;
    let (n, format) = meta_get(path, &meta, "format")?;
    if format != CACHE_FORMAT {
        return Err(Error::format(path, n, format!("unsupported format `{format}`")));
    }
    let (n, stored) = meta_get(path, &meta, "key")?;
    if stored != key {
        return Err(Error::format(path, n, "cache key does not match its contents' inputs"));
    }
    let r = meta_usize(path, &meta, "r")?;
    Ok(CachedMoments {
        r_kappa: read_sym(path, &b, "r_kappa", r)?,
        s_tensor: read_tensor(path, &b, r)?,
    })
}

/// Loads the cache entry for `key` if present. A missing file is `Ok(None)`.
pub fn load_cache(dir: &Path, key: &str) -> Result<Option<CachedMoments>> {
    let path = cache_path(dir, key);
    match fs::read_to_string(&path) {
        Ok(text) => parse_cache(&path, &text, key).map(Some),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

pub fn store_cache(dir: &Path, key: &str, m: &CachedMoments) -> Result<PathBuf> {
    let path = cache_path(dir, key);
    write_text(&path, &cache_text(key, m))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use kaflab_core::kernel::grid_dictionary;
    use kaflab_core::moments::build_model;

    fn model() -> MomentModel {
        let d = grid_dictionary(&[-1.0, -1.0], &[1.0, 1.0], 2).unwrap();
        let k = GaussianKernel::new(0.7).unwrap();
        let im = InputModel::new(SymMatrix::from_upper_fn(2, |i, j| if i == j { 0.25 } else { 0.125 })).unwrap();
        build_model(&d, &k, &im, &[0.01, 0.02, -0.03, 0.04], 0.05).unwrap()
    }

    #[test]
    fn fmt_is_lossless() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn dictionary_round_trip() {
        let d = grid_dictionary(&[-1.0, -1.0], &[1.0, 1.0], 3).unwrap();
        let back = parse_dictionary(Path::new("d.csv"), &dictionary_csv(&d)).unwrap();
        assert_eq!(back, d);
        let e = parse_dictionary(Path::new("d.csv"), "x0,x1\n1,2\n3\n").unwrap_err();
        assert!(matches!(e, Error::Format { line: 3, .. }), "{e}");
    }

    #[test]
    fn curve_round_trip() {
        let c = LearningCurve {
            mse: vec![0.5, 0.25, 1.0 / 7.0],
            n_runs: 3,
            kind: CurveKind::Simulated,
        };
        let text = curve_csv(&c);
        assert!(text.starts_with("n,mse\n0,5.0000000000000000e-1\n"));
        let back = parse_curve(Path::new("c.csv"), &text, CurveKind::Simulated).unwrap();
        assert_eq!(back.mse, c.mse);
        assert!(parse_curve(Path::new("c.csv"), "n,mse\n1,0.5\n", CurveKind::Simulated).is_err());
    }

    #[test]
    fn moment_model_round_trip() {
        let m = model();
        let text = moment_model_text(&m);
        let back = parse_moment_model(Path::new("m.txt"), &text).unwrap();
        assert_eq!(back.r_kappa, m.r_kappa);
        assert_eq!(back.s_tensor, m.s_tensor);
        assert_eq!(back.p, m.p);
        assert_eq!(back.d2, m.d2);
        assert_eq!(back.j_min, m.j_min);
        assert_eq!(back.s_tilde, m.s_tilde);
        assert_eq!(moment_model_text(&back), text);
    }

    #[test]
    fn moment_model_rejects_gaps() {
        let text = moment_model_text(&model());
        let cut = text.replace("0,0,0,0,", "9,9,9,9,");
        assert!(parse_moment_model(Path::new("m.txt"), &cut).is_err());
        let cut: String = text.lines().filter(|l| !l.starts_with("1,3,")).map(|l| format!("{l}\n")).collect();
        assert!(parse_moment_model(Path::new("m.txt"), &cut).is_err());
    }

    #[test]
    fn cache_key_and_round_trip() {
        let m = model();
        let key = moment_cache_key(&m.dictionary, &m.kernel, &m.input);
        assert_eq!(key.len(), 64);
        let other = moment_cache_key(&m.dictionary, &GaussianKernel::new(0.7000000000000001).unwrap(), &m.input);
        assert_ne!(key, other);
        let c = CachedMoments {
            r_kappa: m.r_kappa.clone(),
            s_tensor: m.s_tensor.clone(),
        };
        let back = parse_cache(Path::new("c"), &cache_text(&key, &c), &key).unwrap();
        assert_eq!(back, c);
        assert!(parse_cache(Path::new("c"), &cache_text(&key, &c), &other).is_err());
    }
}
