//! `PGFA-CKPT1` checkpoint container.
//!
//! Layout: the magic line, then `key=value` header lines terminated by an
//! `end` line, then every parameter tensor in canonical order as row-major
//! little-endian `f64`.

use std::fs;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use super::encoder::{Activation, EncoderSpec, TrainerState};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "PGFA-CKPT1";

fn join(widths: &[usize]) -> String {
    widths
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

pub fn encode_checkpoint(state: &TrainerState) -> Vec<u8> {
    let mut out = Vec::new();
    let header = format!(
        "{CHECKPOINT_MAGIC}\nlayer_widths={}\nactivation={}\ntext_dim={}\ntau={}\nlog_tau={}\nparameters={}\nend\n",
        join(&state.spec.layer_widths),
        state.spec.activation,
        state.spec.text_dim,
        state.tau(),
        state.log_tau,
        state.parameter_count(),
    );
    out.extend_from_slice(header.as_bytes());
    for (_, values) in state.groups() {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_checkpoint(path: &Path, state: &TrainerState) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&encode_checkpoint(state))
        .map_err(|e| Error::io(path, e))
}

fn header_error(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column: 1,
        reason: reason.into(),
    }
}

pub fn decode_checkpoint(path: &Path, bytes: &[u8]) -> Result<TrainerState> {
    let mut reader = std::io::Cursor::new(bytes);
    let mut line = String::new();
    let mut line_no = 0;
    let mut next_line = |reader: &mut std::io::Cursor<&[u8]>, line: &mut String| -> Result<usize> {
        line.clear();
        reader.read_line(line).map_err(|e| Error::io(path, e))?;
        line_no += 1;
        Ok(line_no)
    };

    let n = next_line(&mut reader, &mut line)?;
    if line.trim_end() != CHECKPOINT_MAGIC {
        return Err(header_error(
            path,
            n,
            format!("expected magic `{CHECKPOINT_MAGIC}`"),
        ));
    }

    let (mut widths, mut activation, mut text_dim, mut log_tau, mut count) =
        (None, None, None, None, None);
    loop {
        let n = next_line(&mut reader, &mut line)?;
        let entry = line.trim_end();
        if entry == "end" {
            break;
        }
        if entry.is_empty() {
            return Err(header_error(path, n, "header ended without `end`"));
        }
        let (key, value) = entry
            .split_once('=')
            .ok_or_else(|| header_error(path, n, "expected key=value"))?;
        let bad = |what: &str| header_error(path, n, format!("bad {what} `{value}`"));
        match key {
            "layer_widths" => {
                widths = Some(
                    value
                        .split(',')
                        .map(|w| w.parse::<usize>().map_err(|_| bad("layer width")))
                        .collect::<Result<Vec<_>>>()?,
                )
            }
            "activation" => activation = Some(value.parse::<Activation>()?),
            "text_dim" => text_dim = Some(value.parse::<usize>().map_err(|_| bad("text_dim"))?),
            "log_tau" => log_tau = Some(value.parse::<f64>().map_err(|_| bad("log_tau"))?),
            "parameters" => count = Some(value.parse::<usize>().map_err(|_| bad("parameters"))?),
            "tau" => {}
            _ => return Err(header_error(path, n, format!("unknown key `{key}`"))),
        }
    }
    let missing = |k: &str| header_error(path, line_no, format!("missing header key `{k}`"));
    let spec = EncoderSpec {
        layer_widths: widths.ok_or_else(|| missing("layer_widths"))?,
        activation: activation.ok_or_else(|| missing("activation"))?,
        text_dim: text_dim.ok_or_else(|| missing("text_dim"))?,
    };
    let mut state = TrainerState::init(spec, 0)?;
    state.log_tau = log_tau.ok_or_else(|| missing("log_tau"))?;
    if count.ok_or_else(|| missing("parameters"))? != state.parameter_count() {
        return Err(header_error(
            path,
            line_no,
            "parameter count does not match layer widths",
        ));
    }

    let mut payload = Vec::new();
    reader
        .read_to_end(&mut payload)
        .map_err(|e| Error::io(path, e))?;
    let expected = 8 * state.parameter_count();
    if payload.len() != expected {
        return Err(header_error(
            path,
            line_no,
            format!("payload is {} bytes, expected {expected}", payload.len()),
        ));
    }
    let mut chunks = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for (_, values) in state.groups_mut() {
        for v in values.iter_mut() {
            *v = chunks.next().expect("length checked");
        }
    }
    Ok(state)
}

pub fn read_checkpoint(path: &Path) -> Result<TrainerState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(path, &bytes)
}
