//! `.drvlog` demonstration logs.
//!
//! Layout: one JSON header line terminated by `\n`, then `count` fixed-size
//! records of little-endian `f32`:
//!
//! ```text
//! image[H*W] speed throttle brake steering reward done next_image[H*W] next_speed
//! ```
//!
//! `done` is stored as 0.0 or 1.0.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Action, Observation, Transition, DEFAULT_IMAGE_SIZE};

pub const FORMAT_NAME: &str = "drvlog";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoLogHeader {
    pub format: String,
    pub version: u32,
    pub height: usize,
    pub width: usize,
    pub count: usize,
}

pub fn record_floats(height: usize, width: usize) -> usize {
    2 * height * width + 7
}

pub fn write_demo_log(transitions: &[Transition], path: impl AsRef<Path>) -> Result<usize> {
    let (height, width) = match transitions.first() {
        Some(t) => (t.obs.height(), t.obs.width()),
        None => (DEFAULT_IMAGE_SIZE, DEFAULT_IMAGE_SIZE),
    };
    for (i, t) in transitions.iter().enumerate() {
        for o in [&t.obs, &t.next_obs] {
            if o.height() != height || o.width() != width {
                return Err(Error::format(format!(
                    "transition {i} is {}x{}, log is {height}x{width}",
                    o.height(),
                    o.width()
                )));
            }
        }
    }

    let header = DemoLogHeader {
        format: FORMAT_NAME.to_string(),
        version: FORMAT_VERSION,
        height,
        width,
        count: transitions.len(),
    };
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;

    let mut record = Vec::with_capacity(record_floats(height, width) * 4);
    for t in transitions {
        record.clear();
        let mut push = |v: f32| record.extend_from_slice(&v.to_le_bytes());
        t.obs.image().iter().copied().for_each(&mut push);
        push(t.obs.speed());
        push(t.action.throttle);
        push(t.action.brake);
        push(t.action.steering);
        push(t.reward);
        push(if t.done { 1.0 } else { 0.0 });
        t.next_obs.image().iter().copied().for_each(&mut push);
        push(t.next_obs.speed());
        out.write_all(&record)?;
    }
    out.flush()?;
    Ok(transitions.len())
}

pub fn read_demo_log(path: impl AsRef<Path>) -> Result<Vec<Transition>> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut line = Vec::new();
    reader.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::format("missing header line"));
    }
    let header: DemoLogHeader =
        serde_json::from_slice(&line).map_err(|e| Error::format(format!("bad header: {e}")))?;
    if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
        return Err(Error::format(format!(
            "unsupported log {} v{}",
            header.format, header.version
        )));
    }
    let (h, w) = (header.height, header.width);
    if h == 0 || w == 0 {
        return Err(Error::format("zero image dimension"));
    }

    let mut body = Vec::new();
    reader.read_to_end(&mut body)?;
    let record_bytes = record_floats(h, w) * 4;
    if body.len() != header.count * record_bytes {
        return Err(Error::format(format!(
            "header promises {} records ({} bytes), body has {} bytes",
            header.count,
            header.count * record_bytes,
            body.len()
        )));
    }

    let mut out = Vec::with_capacity(header.count);
    for (i, chunk) in body.chunks_exact(record_bytes).enumerate() {
        let vals: Vec<f32> = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if let Some(pos) = vals.iter().position(|v| v.is_nan()) {
            return Err(Error::validation(format!("record {i} has NaN at offset {pos}")));
        }
        let hw = h * w;
        let obs = Observation::new(&vals[..hw], h, w, vals[hw])?;
        let action = Action::new(vals[hw + 1], vals[hw + 2], vals[hw + 3])?;
        let reward = vals[hw + 4];
        let done = match vals[hw + 5] {
            0.0 => false,
            1.0 => true,
            d => return Err(Error::validation(format!("record {i} done flag {d}"))),
        };
        let next_obs = Observation::new(&vals[hw + 6..2 * hw + 6], h, w, vals[2 * hw + 6])?;
        let t = Transition::new(obs, action, reward, next_obs, done)
            .map_err(|e| Error::validation(format!("record {i}: {e}")))?;
        out.push(t);
    }
    Ok(out)
}
