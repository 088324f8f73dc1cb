//! File formats shared between the pipeline stages and the CLI.
//!
//! Binary containers:
//! - records (`DMRC`): header {magic, version u32, n u32, m u32,
//!   record_count u64}, then per record ceil(n/8) bytes of little-endian
//!   packed indicator bits followed by m little-endian f64 outputs.
//! - weights (`DMWT`): header {magic, version u32, m u32, n u32}, then
//!   m*n little-endian f64 values, row-major.
//!
//! Text formats: CSV alternatives for records and weights, a candidate
//! dump (one line per candidate), a scores CSV, a labels file (one 0/1
//! per line), and flat key=value files for metrics and run configs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::feature_math::{DatamodelMatrix, FeatureIndicator};
use crate::maxsum::CandidateSolution;
use crate::subset_sim::SubsetRecord;

pub const RECORDS_MAGIC: &[u8; 4] = b"DMRC";
pub const WEIGHTS_MAGIC: &[u8; 4] = b"DMWT";
pub const FORMAT_VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut bytes = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            bytes[i / 8] |= 1 << (i % 8);
        }
    }
    bytes
}

fn unpack_bits(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| bytes[i / 8] & (1 << (i % 8)) != 0).collect()
}

pub fn write_records(path: &Path, records: &[SubsetRecord]) -> Result<()> {
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidArgument("no records to write".into()))?;
    let (n, m) = (first.indicator.len(), first.outputs.len());
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(RECORDS_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(n as u32).to_le_bytes())?;
    w.write_all(&(m as u32).to_le_bytes())?;
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    for rec in records {
        if rec.indicator.len() != n || rec.outputs.len() != m {
            return Err(Error::DimensionMismatch("inconsistent record shapes".into()));
        }
        w.write_all(&pack_bits(&rec.indicator))?;
        for &x in &rec.outputs {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<SubsetRecord>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != RECORDS_MAGIC {
        return Err(bad(format!("{}: not a records file (bad magic)", path.display())));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported records version {version}")));
    }
    let n = read_u32(&mut r)? as usize;
    let m = read_u32(&mut r)? as usize;
    let count = read_u64(&mut r)? as usize;
    let mut records = Vec::with_capacity(count);
    let mut bit_buf = vec![0u8; n.div_ceil(8)];
    let mut out_buf = vec![0u8; m * 8];
    for _ in 0..count {
        r.read_exact(&mut bit_buf)?;
        r.read_exact(&mut out_buf)?;
        let outputs = out_buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push(SubsetRecord { indicator: unpack_bits(&bit_buf, n), outputs });
    }
    Ok(records)
}

pub fn write_records_csv(path: &Path, records: &[SubsetRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for rec in records {
        let mut fields: Vec<String> = rec
            .indicator
            .iter()
            .map(|&b| if b { "1".into() } else { "0".into() })
            .collect();
        fields.extend(rec.outputs.iter().map(|x| format!("{x:.17e}")));
        writeln!(w, "{}", fields.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// CSV records: the first `n` columns are 0/1 indicators, the rest are
/// float outputs. `n` must be supplied since the split is ambiguous.
pub fn read_records_csv(path: &Path, n: usize) -> Result<Vec<SubsetRecord>> {
    let r = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() <= n {
            return Err(bad(format!("line {}: expected more than {n} fields", lineno + 1)));
        }
        let indicator = fields[..n]
            .iter()
            .map(|f| match f.trim() {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(bad(format!("line {}: bad indicator '{other}'", lineno + 1))),
            })
            .collect::<Result<Vec<bool>>>()?;
        let outputs = fields[n..]
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| bad(format!("line {}: {e}", lineno + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        records.push(SubsetRecord { indicator, outputs });
    }
    if records.is_empty() {
        return Err(bad(format!("{}: empty records file", path.display())));
    }
    Ok(records)
}

pub fn write_weights(path: &Path, weights: &DatamodelMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(WEIGHTS_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(weights.rows() as u32).to_le_bytes())?;
    w.write_all(&(weights.cols() as u32).to_le_bytes())?;
    for &x in weights.values() {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_weights(path: &Path) -> Result<DatamodelMatrix> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != WEIGHTS_MAGIC {
        return Err(bad(format!("{}: not a weights file (bad magic)", path.display())));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported weights version {version}")));
    }
    let m = read_u32(&mut r)? as usize;
    let n = read_u32(&mut r)? as usize;
    let mut buf = vec![0u8; m * n * 8];
    r.read_exact(&mut buf)?;
    let values = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DatamodelMatrix::from_row_major(m, n, values)
}

pub fn write_weights_csv(path: &Path, weights: &DatamodelMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..weights.rows() {
        let fields: Vec<String> =
            weights.row(i).iter().map(|x| format!("{x:.17e}")).collect();
        writeln!(w, "{}", fields.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_weights_csv(path: &Path) -> Result<DatamodelMatrix> {
    let r = BufReader::new(File::open(path)?);
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| bad(format!("line {}: {e}", lineno + 1)))
            })
            .collect::<Result<_>>()?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(bad(format!("line {}: ragged row", lineno + 1)))
            }
            _ => {}
        }
        values.extend(row);
        rows += 1;
    }
    let cols = cols.ok_or_else(|| bad(format!("{}: empty weights file", path.display())))?;
    DatamodelMatrix::from_row_major(rows, cols, values)
}

/// One line per candidate: `k l seed objective_value idx idx ...`.
pub fn write_candidates(path: &Path, candidates: &[CandidateSolution]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for cand in candidates {
        let indices: Vec<String> =
            cand.v.support_indices().iter().map(|i| i.to_string()).collect();
        writeln!(
            w,
            "{} {} {} {:.17e} {}",
            cand.k,
            cand.restart_index,
            cand.seed,
            cand.objective_value,
            indices.join(" ")
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a candidate dump; `n` is the indicator length.
pub fn read_candidates(path: &Path, n: usize) -> Result<Vec<CandidateSolution>> {
    let r = BufReader::new(File::open(path)?);
    let mut candidates = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let mut next = |name: &str| {
            fields
                .next()
                .ok_or_else(|| bad(format!("line {}: missing {name}", lineno + 1)))
        };
        let k: usize = next("k")?
            .parse()
            .map_err(|e| bad(format!("line {}: k: {e}", lineno + 1)))?;
        let restart_index: usize = next("l")?
            .parse()
            .map_err(|e| bad(format!("line {}: l: {e}", lineno + 1)))?;
        let seed: u64 = next("seed")?
            .parse()
            .map_err(|e| bad(format!("line {}: seed: {e}", lineno + 1)))?;
        let objective_value: f64 = next("objective")?
            .parse()
            .map_err(|e| bad(format!("line {}: objective: {e}", lineno + 1)))?;
        let support: Vec<usize> = fields
            .map(|f| f.parse().map_err(|e| bad(format!("line {}: index: {e}", lineno + 1))))
            .collect::<Result<_>>()?;
        if support.len() != k {
            return Err(bad(format!(
                "line {}: k={k} but {} support indices",
                lineno + 1,
                support.len()
            )));
        }
        candidates.push(CandidateSolution {
            v: FeatureIndicator::from_support(n, &support)
                .map_err(|e| bad(format!("line {}: {e}", lineno + 1)))?,
            k,
            objective_value,
            restart_index,
            seed,
            swap_count: 0,
        });
    }
    Ok(candidates)
}

/// CSV with header `index,score,flagged`.
pub fn write_scores_csv(path: &Path, scores: &[f64], flagged: &[bool]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "index,score,flagged")?;
    for (i, (&s, &f)) in scores.iter().zip(flagged).enumerate() {
        writeln!(w, "{i},{s:.17e},{}", u8::from(f))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores_csv(path: &Path) -> Result<(Vec<f64>, Vec<bool>)> {
    let r = BufReader::new(File::open(path)?);
    let mut scores = Vec::new();
    let mut flagged = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(bad(format!("line {}: expected 3 fields", lineno + 1)));
        }
        scores.push(
            fields[1]
                .parse()
                .map_err(|e| bad(format!("line {}: score: {e}", lineno + 1)))?,
        );
        flagged.push(match fields[2].trim() {
            "0" => false,
            "1" => true,
            other => return Err(bad(format!("line {}: bad flag '{other}'", lineno + 1))),
        });
    }
    if scores.is_empty() {
        return Err(bad(format!("{}: empty scores file", path.display())));
    }
    Ok((scores, flagged))
}

/// One 0/1 per line marking poisoned examples.
pub fn write_labels(path: &Path, labels: &[bool]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for &b in labels {
        writeln!(w, "{}", u8::from(b))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<bool>> {
    let r = BufReader::new(File::open(path)?);
    let mut labels = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        match line.trim() {
            "" => continue,
            "0" => labels.push(false),
            "1" => labels.push(true),
            other => return Err(bad(format!("line {}: bad label '{other}'", lineno + 1))),
        }
    }
    if labels.is_empty() {
        return Err(bad(format!("{}: empty labels file", path.display())));
    }
    Ok(labels)
}

/// Flat `key=value` lines, written in the given order.
pub fn write_key_values(path: &Path, pairs: &[(String, String)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (k, v) in pairs {
        writeln!(w, "{k}={v}")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    #[test]
    fn records_binary_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("r.dmrc");
        let records = vec![
            SubsetRecord {
                indicator: vec![true, false, true, false, true, true, false, true, true],
                outputs: vec![1.5, -2.25],
            },
            SubsetRecord {
                indicator: vec![false, true, false, true, false, false, true, false, false],
                outputs: vec![0.0, f64::MIN_POSITIVE],
            },
        ];
        write_records(&path, &records).unwrap();
        assert_eq!(read_records(&path).unwrap(), records);
    }

    #[test]
    fn weights_binary_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("w.dmwt");
        let w = DatamodelMatrix::from_row_major(2, 3, vec![1.0, -0.5, 0.25, 3.0, 0.0, -7.5])
            .unwrap();
        write_weights(&path, &w).unwrap();
        assert_eq!(read_weights(&path).unwrap(), w);
    }

    #[test]
    fn reading_the_wrong_magic_is_a_format_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("w.dmwt");
        std::fs::write(&path, b"NOPE00000000").unwrap();
        assert!(matches!(read_weights(&path), Err(Error::Format(_))));
        assert!(matches!(read_records(&path), Err(Error::Format(_))));
    }

    #[test]
    fn candidates_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.txt");
        let candidates = vec![CandidateSolution {
            v: FeatureIndicator::from_support(10, &[2, 5, 7]).unwrap(),
            k: 3,
            objective_value: 1.25,
            restart_index: 4,
            seed: 99,
            swap_count: 2,
        }];
        write_candidates(&path, &candidates).unwrap();
        let back = read_candidates(&path, 10).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].v, candidates[0].v);
        assert_eq!(back[0].objective_value, 1.25);
        assert_eq!(back[0].seed, 99);
    }

    #[test]
    fn labels_and_scores_round_trip() {
        let dir = tempdir().unwrap();
        let labels = vec![true, false, false, true];
        let lpath = dir.path().join("labels.txt");
        write_labels(&lpath, &labels).unwrap();
        assert_eq!(read_labels(&lpath).unwrap(), labels);

        let spath = dir.path().join("scores.csv");
        let scores = vec![0.5, 0.125, 0.0, 2.0];
        let flagged = vec![false, false, false, true];
        write_scores_csv(&spath, &scores, &flagged).unwrap();
        assert_eq!(read_scores_csv(&spath).unwrap(), (scores, flagged));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn records_csv_round_trip(n in 1usize..20, m in 1usize..5, count in 1usize..8, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let records: Vec<SubsetRecord> = (0..count)
                .map(|_| SubsetRecord {
                    indicator: (0..n).map(|_| rng.random_bool(0.5)).collect(),
                    outputs: (0..m).map(|_| rng.random_range(-10.0..10.0)).collect(),
                })
                .collect();
            let dir = tempdir().unwrap();
            let path = dir.path().join("r.csv");
            write_records_csv(&path, &records).unwrap();
            prop_assert_eq!(read_records_csv(&path, n).unwrap(), records);
        }
    }
}
