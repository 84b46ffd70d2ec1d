//! Binary buffer snapshot: versioned header, shared-frame table, then one
//! length-prefixed record per stored transition. Everything little-endian.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::Arc;

use thiserror::Error;

use crate::env::{Action, Frame, Observation, StateKey, Transition};
use crate::replay::{PrioritizedBuffer, ReplayConfig, Track};

const MAGIC: &[u8; 4] = b"QMRB";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic: not a replay snapshot")]
    BadMagic,
    #[error("unsupported snapshot version {0}")]
    BadVersion(u32),
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
}

fn w_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}
fn w_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}
fn w_f64<W: Write>(w: &mut W, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}
fn r_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
fn r_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
fn r_f64<R: Read>(r: &mut R) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn write_key(out: &mut Vec<u8>, key: &StateKey) {
    out.extend_from_slice(&key.col.to_le_bytes());
    out.extend_from_slice(&key.row.to_le_bytes());
    out.push(key.vy as u8);
    out.extend_from_slice(&key.scroll.to_le_bytes());
}

fn read_key(buf: &[u8], pos: &mut usize) -> Result<StateKey, SnapshotError> {
    let need = 7;
    if buf.len() < *pos + need {
        return Err(SnapshotError::Corrupt("truncated key".into()));
    }
    let col = u16::from_le_bytes([buf[*pos], buf[*pos + 1]]);
    let row = u16::from_le_bytes([buf[*pos + 2], buf[*pos + 3]]);
    let vy = buf[*pos + 4] as i8;
    let scroll = u16::from_le_bytes([buf[*pos + 5], buf[*pos + 6]]);
    *pos += need;
    Ok(StateKey { col, row, vy, scroll })
}

fn frame_ids(obs: &Observation, ids: &HashMap<usize, u32>) -> Vec<u32> {
    obs.frames
        .iter()
        .map(|f| ids[&(Arc::as_ptr(f) as usize)])
        .collect()
}

pub fn save_snapshot<W: Write>(buffer: &PrioritizedBuffer, w: &mut W) -> Result<(), SnapshotError> {
    let (entries, gens, _) = buffer.raw_parts();
    w.write_all(MAGIC)?;
    w_u32(w, VERSION)?;
    w_u64(w, buffer.cfg.capacity as u64)?;
    w_f64(w, buffer.cfg.alpha)?;
    w_f64(w, buffer.cfg.floor)?;
    w_u64(w, buffer.insert_count())?;
    w_u64(w, entries.len() as u64)?;

    // Deduplicated frame table.
    let mut ids: HashMap<usize, u32> = HashMap::new();
    let mut frames: Vec<Arc<Frame>> = Vec::new();
    for t in entries {
        for obs in [&t.obs_before, &t.obs_after] {
            for f in &obs.frames {
                let ptr = Arc::as_ptr(f) as usize;
                if !ids.contains_key(&ptr) {
                    ids.insert(ptr, frames.len() as u32);
                    frames.push(Arc::clone(f));
                }
            }
        }
    }
    w_u32(w, frames.len() as u32)?;
    for f in &frames {
        w_u32(w, f.h as u32)?;
        w_u32(w, f.w as u32)?;
        for v in &f.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }

    for (i, t) in entries.iter().enumerate() {
        let mut rec = Vec::new();
        rec.extend_from_slice(&gens[i].to_le_bytes());
        rec.extend_from_slice(&buffer.track_raw(Track::QMap, i).to_le_bytes());
        rec.extend_from_slice(&buffer.track_raw(Track::Dqn, i).to_le_bytes());
        rec.push(t.action.code() as u8);
        rec.extend_from_slice(&t.reward.to_le_bytes());
        rec.push(t.terminal as u8);
        rec.extend_from_slice(&(t.next_cell.0 as u32).to_le_bytes());
        rec.extend_from_slice(&(t.next_cell.1 as u32).to_le_bytes());
        rec.extend_from_slice(&(t.world_pos_after.0 as u32).to_le_bytes());
        rec.extend_from_slice(&(t.world_pos_after.1 as u32).to_le_bytes());
        write_key(&mut rec, &t.key_before);
        write_key(&mut rec, &t.key_after);
        for obs in [&t.obs_before, &t.obs_after] {
            rec.push(obs.frames.len() as u8);
            for id in frame_ids(obs, &ids) {
                rec.extend_from_slice(&id.to_le_bytes());
            }
        }
        w_u32(w, rec.len() as u32)?;
        w.write_all(&rec)?;
    }
    Ok(())
}

pub fn load_snapshot<R: Read>(r: &mut R) -> Result<PrioritizedBuffer, SnapshotError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(SnapshotError::BadMagic);
    }
    let version = r_u32(r)?;
    if version != VERSION {
        return Err(SnapshotError::BadVersion(version));
    }
    let capacity = r_u64(r)? as usize;
    let alpha = r_f64(r)?;
    let floor = r_f64(r)?;
    let insert_count = r_u64(r)?;
    let n_entries = r_u64(r)? as usize;

    let n_frames = r_u32(r)? as usize;
    let mut frames = Vec::with_capacity(n_frames);
    for _ in 0..n_frames {
        let h = r_u32(r)? as usize;
        let w = r_u32(r)? as usize;
        let mut data = vec![0f32; h * w];
        for v in &mut data {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *v = f32::from_le_bytes(b);
        }
        frames.push(Arc::new(Frame { h, w, data }));
    }

    let mut buffer = PrioritizedBuffer::new(ReplayConfig { capacity, alpha, floor });
    for _ in 0..n_entries {
        let len = r_u32(r)? as usize;
        let mut rec = vec![0u8; len];
        r.read_exact(&mut rec)?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8], SnapshotError> {
            if rec.len() < *pos + n {
                return Err(SnapshotError::Corrupt("truncated record".into()));
            }
            let s = &rec[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let gen = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let qmap_raw = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let dqn_raw = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let action = Action::from_code(take(&mut pos, 1)?[0] as usize)
            .ok_or_else(|| SnapshotError::Corrupt("bad action code".into()))?;
        let reward = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let terminal = take(&mut pos, 1)?[0] != 0;
        let ncx = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let ncy = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let wx = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let wy = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let key_before = read_key(&rec, &mut pos)?;
        let key_after = read_key(&rec, &mut pos)?;
        let read_obs = |pos: &mut usize| -> Result<Observation, SnapshotError> {
            if rec.len() < *pos + 1 {
                return Err(SnapshotError::Corrupt("truncated obs".into()));
            }
            let k = rec[*pos] as usize;
            *pos += 1;
            let mut fs = Vec::with_capacity(k);
            for _ in 0..k {
                if rec.len() < *pos + 4 {
                    return Err(SnapshotError::Corrupt("truncated frame id".into()));
                }
                let id = u32::from_le_bytes(rec[*pos..*pos + 4].try_into().unwrap()) as usize;
                *pos += 4;
                let f = frames.get(id).ok_or_else(|| SnapshotError::Corrupt("frame id out of range".into()))?;
                fs.push(Arc::clone(f));
            }
            Ok(Observation { frames: fs })
        };
        let obs_before = read_obs(&mut pos)?;
        let obs_after = read_obs(&mut pos)?;
        buffer.restore_entry(
            Transition {
                obs_before,
                action,
                obs_after,
                next_cell: (ncx, ncy),
                reward,
                terminal,
                world_pos_after: (wx, wy),
                key_before,
                key_after,
            },
            gen,
            qmap_raw,
            dqn_raw,
        );
    }
    buffer.set_insert_count(insert_count);
    Ok(buffer)
}
