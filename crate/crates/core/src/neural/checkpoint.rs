//! Text checkpoints. Values are written as hexadecimal float literals so a
//! save/load round trip is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use super::mask_encoder::MaskEncoderConfig;
use super::model::{ModelConfig, SeverityModel};
use crate::encoder::Combine;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "lesionkit-severity-model";
pub const CHECKPOINT_VERSION: u32 = 1;
const VALUES_PER_LINE: usize = 8;

/// `%a`-style literal, e.g. `0x1.8p+1` for 3.
pub fn format_hex_float(v: f64) -> String {
    let sign = if v.is_sign_negative() { "-" } else { "" };
    let bits = v.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let mant = bits & ((1u64 << 52) - 1);
    if exp == 0 && mant == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, e) = if exp == 0 { (0, -1022) } else { (1, exp - 1023) };
    let mut frac = format!("{mant:013x}");
    while frac.ends_with('0') {
        frac.pop();
    }
    let dot = if frac.is_empty() { String::new() } else { format!(".{frac}") };
    format!("{sign}0x{lead}{dot}p{e:+}")
}

fn scale_pow2(mut x: f64, mut k: i64) -> f64 {
    while k > 1000 {
        x *= 2f64.powi(1000);
        k -= 1000;
    }
    while k < -1000 {
        x *= 2f64.powi(-1000);
        k += 1000;
    }
    x * 2f64.powi(k as i32)
}

pub fn parse_hex_float(s: &str) -> Result<f64> {
    let bad = || Error::Format(format!("bad hex float {s:?}"));
    let (neg, body) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let body = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")).ok_or_else(bad)?;
    let (digits, exp) = body.split_once(['p', 'P']).ok_or_else(bad)?;
    let exp: i64 = exp.parse().map_err(|_| bad())?;
    let (int, frac) = digits.split_once('.').unwrap_or((digits, ""));
    if int.is_empty() || int.len() + frac.len() > 15 {
        return Err(bad());
    }
    let mut mant: u64 = 0;
    for ch in int.chars().chain(frac.chars()) {
        mant = mant * 16 + ch.to_digit(16).ok_or_else(bad)? as u64;
    }
    let v = scale_pow2(mant as f64, exp - 4 * frac.len() as i64);
    if !v.is_finite() {
        return Err(bad());
    }
    Ok(if neg { -v } else { v })
}

pub fn checkpoint_to_string(model: &SeverityModel) -> String {
    let cfg = model.config();
    let mut s = String::new();
    let _ = writeln!(s, "{CHECKPOINT_MAGIC}");
    let _ = writeln!(s, "version {CHECKPOINT_VERSION}");
    let _ = writeln!(s, "feature_dim {}", cfg.feature_dim);
    let _ = writeln!(s, "hidden_size {}", cfg.hidden_size);
    let _ = writeln!(s, "combine {}", cfg.combine.as_str());
    match &cfg.mask {
        Some(m) => {
            let _ = writeln!(
                s,
                "mask_encoder {} {},{},{} {}",
                m.crop_size, m.filters[0], m.filters[1], m.filters[2], m.kernel
            );
        }
        None => s.push_str("mask_encoder none\n"),
    }
    for (name, t) in model.tensors() {
        let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        let _ = writeln!(s, "tensor {name} {}", shape.join(" "));
        for chunk in t.data().chunks(VALUES_PER_LINE) {
            let vals: Vec<String> = chunk.iter().map(|v| format_hex_float(*v)).collect();
            let _ = writeln!(s, "{}", vals.join(" "));
        }
    }
    s.push_str("end\n");
    s
}

fn header<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>, key: &str) -> Result<&'a str> {
    let (n, line) = lines
        .next()
        .ok_or_else(|| Error::Format(format!("checkpoint truncated before {key}")))?;
    line.strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| Error::Parse {
            line: n + 1,
            message: format!("expected {key}"),
        })
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Format(format!("bad {what} {s:?}")))
}

pub fn checkpoint_from_str(text: &str) -> Result<SeverityModel> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, m)) if m == CHECKPOINT_MAGIC => {}
        _ => return Err(Error::Format("not a severity model checkpoint".into())),
    }
    let version: u32 = parse_num(header(&mut lines, "version")?, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let feature_dim = parse_num(header(&mut lines, "feature_dim")?, "feature_dim")?;
    let hidden_size = parse_num(header(&mut lines, "hidden_size")?, "hidden_size")?;
    let combine: Combine = header(&mut lines, "combine")?.parse()?;
    let mask = match header(&mut lines, "mask_encoder")? {
        "none" => None,
        spec => {
            let parts: Vec<&str> = spec.split(' ').collect();
            let filters: Vec<usize> = match parts.get(1) {
                Some(f) => f.split(',').map(|v| parse_num(v, "filter count")).collect::<Result<_>>()?,
                None => vec![],
            };
            if parts.len() != 3 || filters.len() != 3 {
                return Err(Error::Format(format!("bad mask_encoder line {spec:?}")));
            }
            Some(MaskEncoderConfig {
                crop_size: parse_num(parts[0], "crop size")?,
                filters: [filters[0], filters[1], filters[2]],
                kernel: parse_num(parts[2], "kernel")?,
            })
        }
    };
    let mut model = SeverityModel::zeros(ModelConfig {
        feature_dim,
        hidden_size,
        combine,
        mask,
    })?;
    for (name, t) in model.tensors_mut() {
        let spec = header(&mut lines, "tensor")?;
        let mut it = spec.split(' ');
        if it.next() != Some(name.as_str()) {
            return Err(Error::Format(format!("expected tensor {name}, found {spec:?}")));
        }
        let shape: Vec<usize> = it.map(|d| parse_num(d, "extent")).collect::<Result<_>>()?;
        if shape != t.shape() {
            return Err(Error::Shape(format!(
                "tensor {name} has shape {shape:?}, expected {:?}",
                t.shape()
            )));
        }
        let mut values = Vec::with_capacity(t.len());
        while values.len() < t.len() {
            let (n, line) = lines
                .next()
                .ok_or_else(|| Error::Format(format!("checkpoint truncated inside {name}")))?;
            for tok in line.split_whitespace() {
                values.push(parse_hex_float(tok).map_err(|e| Error::Parse {
                    line: n + 1,
                    message: e.to_string(),
                })?);
            }
        }
        if values.len() != t.len() {
            return Err(Error::Format(format!("tensor {name} has too many values")));
        }
        t.data_mut().copy_from_slice(&values);
    }
    match lines.next() {
        Some((_, "end")) => Ok(model),
        _ => Err(Error::Format("checkpoint missing end marker".into())),
    }
}

pub fn save_checkpoint(model: &SeverityModel, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<SeverityModel> {
    checkpoint_from_str(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}
