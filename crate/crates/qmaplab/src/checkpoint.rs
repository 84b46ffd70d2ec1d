//! Model checkpoints: versioned header + named parameter blobs stored as
//! little-endian 32-bit floats (neural), or sparse (state-key, map) records
//! (tabular). The DQN shares the neural format.

use std::io::{Read, Write};

use thiserror::Error;

use crate::env::StateKey;
use crate::qmap::QMapLearner;
use qmaplab_nn::Network;

const NET_MAGIC: &[u8; 4] = b"QMCK";
const TAB_MAGIC: &[u8; 4] = b"QMTB";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("parameter mismatch: {0}")]
    Mismatch(String),
}

fn w_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn r_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Serializes every named parameter of a network.
pub fn save_network<W: Write>(net: &Network, w: &mut W) -> Result<(), CheckpointError> {
    let mut net = net.clone();
    let params = net.params_mut();
    w.write_all(NET_MAGIC)?;
    w_u32(w, VERSION)?;
    w_u32(w, params.len() as u32)?;
    for p in params {
        let name = p.name.as_bytes();
        w_u32(w, name.len() as u32)?;
        w.write_all(name)?;
        w_u32(w, p.shape.len() as u32)?;
        for d in &p.shape {
            w_u32(w, *d as u32)?;
        }
        for v in p.data.iter() {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Loads parameters by name into an architecture-compatible network.
pub fn load_network<R: Read>(net: &mut Network, r: &mut R) -> Result<(), CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != NET_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r_u32(r)?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let count = r_u32(r)? as usize;
    let mut blobs = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r_u32(r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| CheckpointError::Mismatch("bad name".into()))?;
        let ndim = r_u32(r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r_u32(r)? as usize);
        }
        let len: usize = shape.iter().product::<usize>().max(1);
        let len = if shape.is_empty() { 0 } else { len };
        let mut data = vec![0f32; len];
        for v in &mut data {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *v = f32::from_le_bytes(b);
        }
        blobs.push((name, shape, data));
    }
    let params = net.params_mut();
    if params.len() != blobs.len() {
        return Err(CheckpointError::Mismatch(format!(
            "checkpoint has {} blobs, network has {} parameters",
            blobs.len(),
            params.len()
        )));
    }
    for (p, (name, shape, data)) in params.into_iter().zip(blobs) {
        if p.name != name || p.shape != shape {
            return Err(CheckpointError::Mismatch(format!(
                "expected {} {:?}, found {} {:?}",
                p.name, p.shape, name, shape
            )));
        }
        for (dst, src) in p.data.iter_mut().zip(data) {
            *dst = src as f64;
        }
    }
    Ok(())
}

/// Sparse tabular checkpoint: (state-key, q-map values) records sorted by key.
pub fn save_tabular<W: Write>(learner: &QMapLearner, w: &mut W) -> Result<(), CheckpointError> {
    w.write_all(TAB_MAGIC)?;
    w_u32(w, VERSION)?;
    w_u32(w, learner.hq as u32)?;
    w_u32(w, learner.wq as u32)?;
    let rows = learner.tabular_entries();
    w_u32(w, rows.len() as u32)?;
    for (key, values) in rows {
        w.write_all(&key.col.to_le_bytes())?;
        w.write_all(&key.row.to_le_bytes())?;
        w.write_all(&[key.vy as u8])?;
        w.write_all(&key.scroll.to_le_bytes())?;
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_tabular<R: Read>(learner: &mut QMapLearner, r: &mut R) -> Result<(), CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TAB_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r_u32(r)?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let hq = r_u32(r)? as usize;
    let wq = r_u32(r)? as usize;
    if (hq, wq) != (learner.hq, learner.wq) {
        return Err(CheckpointError::Mismatch(format!(
            "checkpoint grid {hq}x{wq}, learner grid {}x{}",
            learner.hq, learner.wq
        )));
    }
    let count = r_u32(r)? as usize;
    let cells = hq * wq * 6;
    let mut rows = Vec::with_capacity(count);
    for _ in 0..count {
        let mut head = [0u8; 7];
        r.read_exact(&mut head)?;
        let key = StateKey {
            col: u16::from_le_bytes([head[0], head[1]]),
            row: u16::from_le_bytes([head[2], head[3]]),
            vy: head[4] as i8,
            scroll: u16::from_le_bytes([head[5], head[6]]),
        };
        let mut values = vec![0f64; cells];
        for v in &mut values {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *v = f64::from_le_bytes(b);
        }
        rows.push((key, values));
    }
    learner.load_tabular_entries(rows);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmap::QMapConfig;
    use crate::util::seeded_rng;
    use qmaplab_nn::{ArchSpec, build_value_network};

    #[test]
    fn network_checkpoint_round_trips_with_f32_precision() {
        let spec = ArchSpec::fit_encoder(8, 8, (2, 3, 3), 8).unwrap();
        let mut rng = seeded_rng(0, "ckpt");
        let net = build_value_network(&spec, 1, 8, 8, 6, true, &mut rng).unwrap();
        let mut bytes = Vec::new();
        save_network(&net, &mut bytes).unwrap();
        let mut other = build_value_network(&spec, 1, 8, 8, 6, true, &mut seeded_rng(1, "ckpt")).unwrap();
        load_network(&mut other, &mut bytes.as_slice()).unwrap();
        let mut a = net.clone();
        let mut b = other.clone();
        for (pa, pb) in a.params_mut().into_iter().zip(b.params_mut()) {
            for (va, vb) in pa.data.iter().zip(pb.data.iter()) {
                assert!((*va as f32 - *vb as f32).abs() == 0.0, "f32-exact round trip");
            }
        }
    }

    #[test]
    fn mismatched_network_is_rejected() {
        let spec = ArchSpec::fit_encoder(8, 8, (2, 3, 3), 8).unwrap();
        let mut rng = seeded_rng(2, "ckpt");
        let net = build_value_network(&spec, 1, 8, 8, 6, true, &mut rng).unwrap();
        let mut bytes = Vec::new();
        save_network(&net, &mut bytes).unwrap();
        let other_spec = ArchSpec::fit_encoder(8, 8, (2, 3, 3), 16).unwrap();
        let mut other = build_value_network(&other_spec, 1, 8, 8, 6, true, &mut rng).unwrap();
        assert!(matches!(
            load_network(&mut other, &mut bytes.as_slice()),
            Err(CheckpointError::Mismatch(_))
        ));
    }

    #[test]
    fn tabular_checkpoint_round_trips_exactly() {
        let mut learner = QMapLearner::new_tabular(2, 3, QMapConfig::default());
        let key = StateKey { col: 4, row: 1, vy: -1, scroll: 2 };
        let values: Vec<f64> = (0..36).map(|i| i as f64 * 0.1).collect();
        learner.load_tabular_entries(vec![(key, values.clone())]);
        let mut bytes = Vec::new();
        save_tabular(&learner, &mut bytes).unwrap();
        let mut other = QMapLearner::new_tabular(2, 3, QMapConfig::default());
        load_tabular(&mut other, &mut bytes.as_slice()).unwrap();
        let rows = other.tabular_entries();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].0, key);
        assert_eq!(rows[0].1, &values);
    }
}
