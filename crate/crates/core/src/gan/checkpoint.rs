//! Binary checkpoint format.
//!
//! ```text
//! "DFGC" | version u16 | record count u32
//! per record: name len u32 | name utf-8 | dtype u8 | rank u8 | dims u64×rank | payload (LE)
//! config fingerprint u64 | loop counter u64
//! ```
//! Dtype codes: 0 = f32, 1 = f64, 2 = u8, 3 = u64.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{Checkpoint, GanConfig, LossRecord};
use crate::error::{Error, Result};
use crate::tensor::layers::Module;
use crate::tensor::{Adam, AdamState, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DFGC";
pub const CHECKPOINT_VERSION: u16 = 1;

enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
    Bytes(Vec<u8>),
    U64(Vec<u64>),
}

struct Record {
    dims: Vec<usize>,
    payload: Payload,
}

impl Record {
    fn f32(dims: &[usize], data: &[f32]) -> Self {
        Self { dims: dims.to_vec(), payload: Payload::F32(data.to_vec()) }
    }
}

fn collect(state: &Checkpoint) -> Vec<(String, Record)> {
    let mut out = Vec::new();
    let config = serde_json::to_vec(&state.config).expect("config serializes");
    out.push(("config".to_string(), Record { dims: vec![config.len()], payload: Payload::Bytes(config) }));
    for (prefix, net) in [("g", &state.generator as &dyn Module), ("d", &state.discriminator as &dyn Module)] {
        net.visit_params(&mut |n, p| {
            out.push((format!("{prefix}.{n}"), Record::f32(p.value.shape(), p.value.data())));
        });
        net.visit_stats(&mut |n, s| {
            out.push((format!("{prefix}.{n}.running_mean"), Record::f32(&[s.running_mean.len()], &s.running_mean)));
            out.push((format!("{prefix}.{n}.running_var"), Record::f32(&[s.running_var.len()], &s.running_var)));
        });
    }
    for (prefix, opt) in [("opt_g", &state.opt_g), ("opt_d", &state.opt_d)] {
        out.push((format!("{prefix}.t"), Record { dims: vec![1], payload: Payload::U64(vec![opt.t]) }));
        for (i, st) in opt.states.iter().enumerate() {
            out.push((format!("{prefix}.m.{i}"), Record::f32(&[st.m.len()], &st.m)));
            out.push((format!("{prefix}.v.{i}"), Record::f32(&[st.v.len()], &st.v)));
        }
    }
    let hist: Vec<f64> = state
        .history
        .iter()
        .flat_map(|r| [r.loop_index as f64, r.d_loss, r.g_loss])
        .collect();
    out.push((
        "history".to_string(),
        Record { dims: vec![state.history.len(), 3], payload: Payload::F64(hist) },
    ));
    out
}

fn encode(state: &Checkpoint) -> Vec<u8> {
    let records = collect(state);
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, rec) in &records {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        let code: u8 = match rec.payload {
            Payload::F32(_) => 0,
            Payload::F64(_) => 1,
            Payload::Bytes(_) => 2,
            Payload::U64(_) => 3,
        };
        buf.push(code);
        buf.push(rec.dims.len() as u8);
        for &d in &rec.dims {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &rec.payload {
            Payload::F32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            Payload::F64(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            Payload::Bytes(v) => buf.extend_from_slice(v),
            Payload::U64(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        }
    }
    buf.extend_from_slice(&state.fingerprint().to_le_bytes());
    buf.extend_from_slice(&state.loop_index.to_le_bytes());
    buf
}

pub fn save_checkpoint(state: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, encode(state))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Corrupt(format!("truncated while reading {what} at byte {}", self.pos))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

fn decode(buf: &[u8]) -> Result<(BTreeMap<String, Record>, u64, u64)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Corrupt("bad magic".into()));
    }
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Corrupt(format!("unsupported version {version}")));
    }
    let count = r.u32("record count")?;
    let mut records = BTreeMap::new();
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = String::from_utf8(r.take(len, "name")?.to_vec())
            .map_err(|_| Error::Corrupt("record name is not utf-8".into()))?;
        let code = r.u8("dtype")?;
        let rank = r.u8("rank")? as usize;
        let dims: Vec<usize> = (0..rank)
            .map(|_| r.u64("dims").map(|d| d as usize))
            .collect::<Result<_>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Corrupt(format!("{name}: dims overflow")))?;
        let width = match code {
            0 => 4,
            1 | 3 => 8,
            2 => 1,
            c => return Err(Error::Corrupt(format!("{name}: unknown dtype code {c}"))),
        };
        let bytes = r.take(
            n.checked_mul(width).ok_or_else(|| Error::Corrupt(format!("{name}: size overflow")))?,
            &name,
        )?;
        let payload = match code {
            0 => Payload::F32(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
            1 => Payload::F64(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
            2 => Payload::Bytes(bytes.to_vec()),
            _ => Payload::U64(bytes.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect()),
        };
        if records.insert(name.clone(), Record { dims, payload }).is_some() {
            return Err(Error::Corrupt(format!("duplicate record {name}")));
        }
    }
    let fingerprint = r.u64("fingerprint")?;
    let loop_index = r.u64("loop counter")?;
    if r.pos != buf.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok((records, fingerprint, loop_index))
}

fn f32_record<'a>(records: &'a BTreeMap<String, Record>, name: &str, dims: &[usize]) -> Result<&'a [f32]> {
    let rec = records
        .get(name)
        .ok_or_else(|| Error::Corrupt(format!("missing record {name}")))?;
    match &rec.payload {
        Payload::F32(v) if rec.dims == dims => Ok(v),
        Payload::F32(_) => Err(Error::Corrupt(format!("{name}: dims {:?}, expected {dims:?}", rec.dims))),
        _ => Err(Error::Corrupt(format!("{name}: expected f32 data"))),
    }
}

fn restore_net(records: &BTreeMap<String, Record>, prefix: &str, net: &mut dyn Module) -> Result<()> {
    let mut err = None;
    net.visit_params_mut(&mut |n, p| {
        if err.is_some() {
            return;
        }
        let shape = p.value.shape().to_vec();
        match f32_record(records, &format!("{prefix}.{n}"), &shape) {
            Ok(v) => p.value = Tensor::new(&shape, v.to_vec()).expect("shape checked"),
            Err(e) => err = Some(e),
        }
    });
    net.visit_stats_mut(&mut |n, s| {
        if err.is_some() {
            return;
        }
        let c = [s.running_mean.len()];
        match (
            f32_record(records, &format!("{prefix}.{n}.running_mean"), &c),
            f32_record(records, &format!("{prefix}.{n}.running_var"), &c),
        ) {
            (Ok(m), Ok(v)) => {
                s.running_mean = m.to_vec();
                s.running_var = v.to_vec();
            }
            (Err(e), _) | (_, Err(e)) => err = Some(e),
        }
    });
    err.map_or(Ok(()), Err)
}

fn restore_opt(records: &BTreeMap<String, Record>, prefix: &str, opt: &mut Adam) -> Result<()> {
    match records.get(&format!("{prefix}.t")).map(|r| &r.payload) {
        Some(Payload::U64(v)) if v.len() == 1 => opt.t = v[0],
        _ => return Err(Error::Corrupt(format!("missing or malformed {prefix}.t"))),
    }
    opt.states.clear();
    let mut i = 0;
    while let Some(rec) = records.get(&format!("{prefix}.m.{i}")) {
        let m = f32_record(records, &format!("{prefix}.m.{i}"), &rec.dims)?.to_vec();
        let v = f32_record(records, &format!("{prefix}.v.{i}"), &rec.dims)?.to_vec();
        opt.states.push(AdamState { m, v });
        i += 1;
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let buf = fs::read(path)?;
    let (records, fingerprint, loop_index) = decode(&buf)?;
    let config: GanConfig = match records.get("config").map(|r| &r.payload) {
        Some(Payload::Bytes(b)) => serde_json::from_slice(b).map_err(|e| Error::Corrupt(format!("config: {e}")))?,
        _ => return Err(Error::Corrupt("missing config record".into())),
    };
    if config.fingerprint() != fingerprint {
        log::warn!(
            "{}: stored fingerprint {fingerprint:016x} does not match its config {:016x}",
            path.display(),
            config.fingerprint()
        );
    }
    let mut state = Checkpoint::new(&config)?;
    restore_net(&records, "g", &mut state.generator)?;
    restore_net(&records, "d", &mut state.discriminator)?;
    restore_opt(&records, "opt_g", &mut state.opt_g)?;
    restore_opt(&records, "opt_d", &mut state.opt_d)?;
    state.history = match records.get("history") {
        Some(Record { dims, payload: Payload::F64(v) }) if dims.len() == 2 && dims[1] == 3 => v
            .chunks_exact(3)
            .map(|c| LossRecord { loop_index: c[0] as u64, d_loss: c[1], g_loss: c[2] })
            .collect(),
        _ => return Err(Error::Corrupt("missing or malformed history".into())),
    };
    state.loop_index = loop_index;
    Ok(state)
}

impl Checkpoint {
    /// True when `cfg` describes the same networks and update rule; logs a
    /// warning otherwise so callers can proceed deliberately.
    pub fn check_config(&self, cfg: &GanConfig) -> bool {
        let ok = cfg.fingerprint() == self.fingerprint();
        if !ok {
            log::warn!(
                "checkpoint fingerprint {:016x} differs from requested config {:016x}; proceeding",
                self.fingerprint(),
                cfg.fingerprint()
            );
        }
        ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::{prepare_real, sample_latents, train_gan_with, NoObserver};
    use crate::rng::RngStream;

    fn cfg() -> GanConfig {
        GanConfig {
            batch_size: 4,
            latent_size: 6,
            gen_channels: vec![4, 4],
            disc_channels: vec![4, 4],
            image_size: 8,
            ..GanConfig::toy()
        }
    }

    fn trained() -> (Checkpoint, Tensor) {
        let c = cfg();
        let imgs: Vec<crate::data::Image> = (0..6)
            .map(|i| crate::data::Image::filled(8, 8, 1, i as f32 / 6.0))
            .collect();
        let refs: Vec<_> = imgs.iter().collect();
        let real = prepare_real(&refs, &c).unwrap();
        let mut st = Checkpoint::new(&c).unwrap();
        train_gan_with(&mut st, &real, 2, &mut NoObserver, None).unwrap();
        (st, real)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (mut st, real) = trained();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.dfgc");
        save_checkpoint(&st, &p).unwrap();
        let mut back = load_checkpoint(&p).unwrap();
        assert_eq!(back.generator.snapshot(), st.generator.snapshot());
        assert_eq!(back.discriminator.snapshot(), st.discriminator.snapshot());
        assert_eq!(back.opt_d, st.opt_d);
        assert_eq!(back.history, st.history);
        assert_eq!(back.loop_index, 2);
        let z = Tensor::randn(&[2, 6], 1.0, &mut RngStream::new(0));
        assert_eq!(
            sample_latents(&mut back.generator, &z).unwrap(),
            sample_latents(&mut st.generator, &z).unwrap()
        );
        train_gan_with(&mut st, &real, 1, &mut NoObserver, None).unwrap();
        train_gan_with(&mut back, &real, 1, &mut NoObserver, None).unwrap();
        assert_eq!(back.generator.snapshot(), st.generator.snapshot());
        assert_eq!(back.history, st.history);
        assert_eq!(encode(&back), encode(&st));
    }

    #[test]
    fn truncation_and_magic_detected() {
        let (st, _) = trained();
        let bytes = encode(&st);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.dfgc");
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            fs::write(&p, &bytes[..cut]).unwrap();
            assert!(matches!(load_checkpoint(&p), Err(Error::Corrupt(_))), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        fs::write(&p, &bad).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Corrupt(_))));
    }

    #[test]
    fn fingerprint_mismatch_warns_only() {
        let (st, _) = trained();
        assert!(st.check_config(&cfg()));
        assert!(!st.check_config(&GanConfig { k_d: 2, ..cfg() }));
    }
}
