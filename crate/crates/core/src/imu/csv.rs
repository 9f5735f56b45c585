use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ImuError, ImuSequence, Quat, Result};

pub const CSV_HEADER: &str = "t,ax,ay,az,gx,gy,gz,qw,qx,qy,qz,px,py,pz";

pub fn write_csv<W: Write>(seq: &ImuSequence, mut w: W) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for i in 0..seq.len() {
        let (a, g, q, p) = (seq.accel[i], seq.gyro[i], seq.q_ori[i], seq.pos[i]);
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            seq.t[i], a[0], a[1], a[2], g[0], g[1], g[2], q.w, q.x, q.y, q.z, p[0], p[1], p[2]
        )?;
    }
    Ok(())
}

pub fn save_csv(seq: &ImuSequence, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_csv(seq, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Parses the CSV format; the header must list exactly [`CSV_HEADER`].
pub fn read_csv<R: Read>(r: R) -> Result<ImuSequence> {
    let mut lines = BufReader::new(r).lines();
    let header = lines.next().ok_or(ImuError::Csv { line: 1, msg: "empty file".into() })??;
    let header = header.trim_end_matches('\r');
    if header != CSV_HEADER {
        let have: Vec<&str> = header.split(',').collect();
        let missing: Vec<&str> = CSV_HEADER.split(',').filter(|c| !have.contains(c)).collect();
        let msg = if missing.is_empty() {
            format!("expected header `{CSV_HEADER}`, got `{header}`")
        } else {
            format!("missing columns {missing:?}")
        };
        return Err(ImuError::Csv { line: 1, msg });
    }
    let mut seq = ImuSequence { t: vec![], accel: vec![], gyro: vec![], q_ori: vec![], pos: vec![] };
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| ImuError::Csv { line: line_no, msg: e.to_string() })?;
        if vals.len() != 14 {
            return Err(ImuError::Csv { line: line_no, msg: format!("{} fields, expected 14", vals.len()) });
        }
        if let Some(&prev) = seq.t.last() {
            if !(vals[0] > prev) {
                return Err(ImuError::Csv { line: line_no, msg: format!("timestamp {} not after {prev}", vals[0]) });
            }
        }
        seq.t.push(vals[0]);
        seq.accel.push([vals[1], vals[2], vals[3]]);
        seq.gyro.push([vals[4], vals[5], vals[6]]);
        seq.q_ori.push(Quat::new(vals[7], vals[8], vals[9], vals[10]));
        seq.pos.push([vals[11], vals[12], vals[13]]);
    }
    seq.validate()?;
    Ok(seq)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<ImuSequence> {
    read_csv(File::open(path)?)
}
