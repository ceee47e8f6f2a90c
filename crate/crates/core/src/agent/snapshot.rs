//! Versioned binary snapshot of an agent.
//!
//! Layout (all little-endian): magic, version `u32`, scalar width `u8`,
//! state and action dims `u32`, training steps `u64`, clip bounds `f64 x2`,
//! encoder generation tags `u64 x3`, the parameter section, the optimizer
//! section and an optional checkpoint section. A section is a `u32` tensor
//! count followed by `u64` length-prefixed tensors. Shapes come from the
//! config the agent was built with; loading checks every length against it.

use std::io::{Read, Write};
use std::path::Path;

use super::{Agent, ClipBounds, PolicySnapshot};
use crate::error::{Error, Result};
use crate::nn::{Adam, Parameters, Scalar};

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"TD7SNAP\0";
pub const SNAPSHOT_VERSION: u32 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn tensors<S: Scalar>(&mut self, tensors: &[&[S]]) {
        self.u32(tensors.len() as u32);
        for t in tensors {
            self.u64(t.len() as u64);
            for &v in *t {
                v.write_le(&mut self.buf);
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::usage("snapshot truncated"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn tensors<S: Scalar>(&mut self) -> Result<Vec<Vec<S>>> {
        let count = self.u32()? as usize;
        let mut out = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = self.u64()? as usize;
            let bytes = self.take(len.checked_mul(S::BYTES).ok_or_else(|| Error::usage("tensor too large"))?)?;
            out.push(bytes.chunks_exact(S::BYTES).map(S::read_le).collect());
        }
        Ok(out)
    }
}

fn fill<S: Scalar>(dst: Vec<&mut [S]>, src: &[Vec<S>], what: &str) -> Result<()> {
    if dst.len() != src.len() {
        return Err(Error::usage(format!(
            "snapshot {what}: {} tensors, agent expects {}",
            src.len(),
            dst.len()
        )));
    }
    for (i, (d, s)) in dst.iter().zip(src).enumerate() {
        if d.len() != s.len() {
            return Err(Error::usage(format!(
                "snapshot {what}: tensor {i} has {} values, agent expects {}",
                s.len(),
                d.len()
            )));
        }
    }
    for (d, s) in dst.into_iter().zip(src) {
        d.copy_from_slice(s);
    }
    Ok(())
}

fn write_adam<S: Scalar>(w: &mut Writer, opt: &Adam<S>) {
    w.u64(opt.step_count());
    let (m, v) = opt.moments();
    let m: Vec<&[S]> = m.iter().map(Vec::as_slice).collect();
    let v: Vec<&[S]> = v.iter().map(Vec::as_slice).collect();
    w.tensors(&m);
    w.tensors(&v);
}

fn read_adam<S: Scalar>(r: &mut Reader<'_>, opt: &mut Adam<S>) -> Result<()> {
    let steps = r.u64()?;
    let m = r.tensors()?;
    let v = r.tensors()?;
    if m.len() != v.len() {
        return Err(Error::usage("snapshot optimizer moments disagree"));
    }
    opt.restore(steps, m, v);
    Ok(())
}

impl<S: Scalar> Agent<S> {
    fn parameter_tensors(&self) -> Vec<&[S]> {
        let mut t = Vec::new();
        t.extend(self.encoders.current.tensors());
        t.extend(self.encoders.fixed.tensors());
        t.extend(self.encoders.target_fixed.tensors());
        for c in self.critics.iter().chain(&self.critic_targets) {
            t.extend(c.tensors());
        }
        t.extend(self.actor.tensors());
        t.extend(self.actor_target.tensors());
        t
    }

    fn parameter_tensors_mut(&mut self) -> Vec<&mut [S]> {
        let mut t = Vec::new();
        t.extend(self.encoders.current.tensors_mut());
        t.extend(self.encoders.fixed.tensors_mut());
        t.extend(self.encoders.target_fixed.tensors_mut());
        for c in self.critics.iter_mut().chain(self.critic_targets.iter_mut()) {
            t.extend(c.tensors_mut());
        }
        t.extend(self.actor.tensors_mut());
        t.extend(self.actor_target.tensors_mut());
        t
    }

    pub fn to_bytes(&self, checkpoint: Option<&PolicySnapshot<S>>) -> Vec<u8> {
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(SNAPSHOT_MAGIC);
        w.u32(SNAPSHOT_VERSION);
        w.u8(S::BYTES as u8);
        w.u32(self.state_dim as u32);
        w.u32(self.action_dim as u32);
        w.u64(self.training_steps);
        w.f64(self.bounds.q_min);
        w.f64(self.bounds.q_max);
        w.u64(self.encoders.current.tag());
        w.u64(self.encoders.fixed.tag());
        w.u64(self.encoders.target_fixed.tag());
        w.tensors(&self.parameter_tensors());
        write_adam(&mut w, &self.encoder_opt);
        for opt in &self.critic_opts {
            write_adam(&mut w, opt);
        }
        write_adam(&mut w, &self.actor_opt);
        match checkpoint {
            Some(c) => {
                w.u8(1);
                w.tensors(&c.tensors());
            }
            None => w.u8(0),
        }
        w.buf
    }

    /// Restores state written by [`Agent::to_bytes`] into an agent built from
    /// the same config. Returns the checkpoint policy if one was stored.
    pub fn restore_bytes(&mut self, bytes: &[u8]) -> Result<Option<PolicySnapshot<S>>> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != SNAPSHOT_MAGIC {
            return Err(Error::usage("not an agent snapshot"));
        }
        let version = r.u32()?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::usage(format!("unsupported snapshot version {version}")));
        }
        let width = r.u8()? as usize;
        if width != S::BYTES {
            return Err(Error::usage(format!(
                "snapshot holds {width}-byte scalars, agent uses {}",
                S::NAME
            )));
        }
        let (sd, ad) = (r.u32()? as usize, r.u32()? as usize);
        if (sd, ad) != (self.state_dim, self.action_dim) {
            return Err(Error::usage(format!(
                "snapshot dims ({sd}, {ad}) differ from agent ({}, {})",
                self.state_dim, self.action_dim
            )));
        }
        let steps = r.u64()?;
        let bounds = ClipBounds {
            q_min: r.f64()?,
            q_max: r.f64()?,
        };
        let tags = [r.u64()?, r.u64()?, r.u64()?];
        let params = r.tensors::<S>()?;
        let mut opts = vec![self.encoder_opt.clone(), self.critic_opts[0].clone(), self.critic_opts[1].clone(), self.actor_opt.clone()];
        for opt in &mut opts {
            read_adam(&mut r, opt)?;
        }
        let checkpoint = match r.u8()? {
            0 => None,
            1 => {
                let tensors = r.tensors::<S>()?;
                let mut snap = self.policy_snapshot();
                fill(snap.tensors_mut(), &tensors, "checkpoint")?;
                Some(snap)
            }
            other => return Err(Error::usage(format!("bad checkpoint flag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::usage("trailing bytes after snapshot"));
        }
        fill(self.parameter_tensors_mut(), &params, "parameters")?;
        let mut opts = opts.into_iter();
        self.encoder_opt = opts.next().expect("four optimizers");
        self.critic_opts = [opts.next().expect("critic"), opts.next().expect("critic")];
        self.actor_opt = opts.next().expect("actor");
        self.encoders.current.set_tag(tags[0]);
        self.encoders.fixed.set_tag(tags[1]);
        self.encoders.target_fixed.set_tag(tags[2]);
        self.training_steps = steps;
        self.bounds = bounds;
        Ok(checkpoint)
    }

    pub fn save(&self, path: &Path, checkpoint: Option<&PolicySnapshot<S>>) -> Result<()> {
        let bytes = self.to_bytes(checkpoint);
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&bytes))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(&mut self, path: &Path) -> Result<Option<PolicySnapshot<S>>> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        self.restore_bytes(&bytes)
    }
}
