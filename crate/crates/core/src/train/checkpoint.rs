//! Training checkpoint: a complete weight block followed by a `UCKP1`
//! section with everything needed to continue the run bit-exactly.
//!
//! ```text
//! weight block (magic UNET1 ... CRC32)
//! "UCKP1", version u32
//! epoch, seed, epochs, batch_size     u64 each
//! augment                             u8 (0 none, 1 horizontal flip)
//! lr, beta1, beta2, epsilon, schedule_decay                    f64
//! factor f64, patience u64, min_delta f64, cooldown u64, min_lr f64
//! input height, input width           u64
//! channel means                       u32 count, f32 values
//! optimizer: t u64, m_schedule f64, u32 arrays, (m, v) as counted f32 arrays
//! scheduler: lr f64, best f64, wait u64, cooldown counter u64
//! best val accuracy f64, best epoch u64
//! history: u32 rows, each epoch u64 + 5 × f64
//! CRC32 over the section
//! ```

use std::path::Path;

use super::history::EpochRecord;
use super::TrainConfig;
use crate::arch::{decode_weights, write_weights, UnionNet};
use crate::codec::{write_atomic, ByteReader, ByteWriter};
use crate::data::AugmentPolicy;
use crate::error::{Error, Result};
use crate::optim::{NadamConfig, NadamState, PlateauConfig, PlateauController, PlateauState};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"UCKP1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: UnionNet,
    /// Completed epochs.
    pub epoch: usize,
    pub config: TrainConfig,
    pub input_height: usize,
    pub input_width: usize,
    /// Per-channel means of the training split, subtracted from every input.
    pub channel_means: Vec<f32>,
    pub optimizer: NadamState,
    pub scheduler: PlateauState,
    pub best_val_acc: f64,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        write_weights(&mut w, &self.net);
        let start = w.buf.len();
        let c = &self.config;
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.u64(self.epoch as u64);
        w.u64(c.seed);
        w.u64(c.epochs as u64);
        w.u64(c.batch_size as u64);
        w.u8(match c.augment {
            AugmentPolicy::None => 0,
            AugmentPolicy::HorizontalFlip => 1,
        });
        let o = &c.optimizer;
        for v in [o.lr, o.beta1, o.beta2, o.epsilon, o.schedule_decay] {
            w.f64(v);
        }
        let p = &c.plateau;
        w.f64(p.factor);
        w.u64(p.patience as u64);
        w.f64(p.min_delta);
        w.u64(p.cooldown as u64);
        w.f64(p.min_lr);
        w.u64(self.input_height as u64);
        w.u64(self.input_width as u64);
        w.f32_array(&self.channel_means);
        self.optimizer.write(&mut w);
        PlateauController {
            cfg: c.plateau,
            state: self.scheduler,
        }
        .write_state(&mut w);
        w.f64(self.best_val_acc);
        w.u64(self.best_epoch as u64);
        w.u32(self.history.len() as u32);
        for r in &self.history {
            w.u64(r.epoch as u64);
            for v in [r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.lr] {
                w.f64(v);
            }
        }
        let crc = crc32fast::hash(&w.buf[start..]);
        w.u32(crc);
        w.buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (net, consumed) = decode_weights(bytes)?;
        // offsets in errors are relative to the whole file
        let shift = |e: Error| match e {
            Error::Parse { offset, msg } => Error::Parse {
                offset: offset + consumed,
                msg,
            },
            other => other,
        };
        Self::decode_section(net, &bytes[consumed..]).map_err(shift)
    }

    fn decode_section(net: UnionNet, bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(CHECKPOINT_MAGIC.len(), "checkpoint magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Parse {
                offset: 0,
                msg: "missing checkpoint section (plain weight file?)".into(),
            });
        }
        let version = r.u32("checkpoint version")?;
        if version != CHECKPOINT_VERSION {
            return r.err(format!("unsupported checkpoint version {version}"));
        }
        let epoch = r.u64("epoch")? as usize;
        let seed = r.u64("seed")?;
        let epochs = r.u64("epochs")? as usize;
        let batch_size = r.u64("batch size")? as usize;
        let augment = match r.u8("augmentation")? {
            0 => AugmentPolicy::None,
            1 => AugmentPolicy::HorizontalFlip,
            v => return r.err(format!("unknown augmentation code {v}")),
        };
        let optimizer_cfg = NadamConfig {
            lr: r.f64("lr")?,
            beta1: r.f64("beta1")?,
            beta2: r.f64("beta2")?,
            epsilon: r.f64("epsilon")?,
            schedule_decay: r.f64("schedule decay")?,
        };
        let plateau = PlateauConfig {
            factor: r.f64("plateau factor")?,
            patience: r.u64("plateau patience")? as usize,
            min_delta: r.f64("plateau min_delta")?,
            cooldown: r.u64("plateau cooldown")? as usize,
            min_lr: r.f64("plateau min_lr")?,
        };
        let input_height = r.u64("input height")? as usize;
        let input_width = r.u64("input width")? as usize;
        let channel_means = r.f32_array("channel means")?;
        let names: Vec<String> = net
            .trainable_names()
            .iter()
            .map(|s| s.to_string())
            .collect();
        let sizes: Vec<usize> = net
            .trainable_params()
            .iter()
            .map(|p| p.values.len())
            .collect();
        let optimizer = NadamState::read(&mut r, names, &sizes)?;
        let scheduler = PlateauController::read_state(&mut r)?;
        let best_val_acc = r.f64("best val accuracy")?;
        let best_epoch = r.u64("best epoch")? as usize;
        let rows = r.u32("history rows")? as usize;
        let mut history = Vec::with_capacity(rows.min(100_000));
        for _ in 0..rows {
            history.push(EpochRecord {
                epoch: r.u64("history epoch")? as usize,
                train_loss: r.f64("history")?,
                train_acc: r.f64("history")?,
                val_loss: r.f64("history")?,
                val_acc: r.f64("history")?,
                lr: r.f64("history")?,
            });
        }
        r.check_crc(0)?;
        if r.remaining() != 0 {
            return r.err(format!("{} trailing bytes after checkpoint", r.remaining()));
        }
        Ok(Checkpoint {
            net,
            epoch,
            config: TrainConfig {
                optimizer: optimizer_cfg,
                plateau,
                epochs,
                batch_size,
                seed,
                augment,
            },
            input_height,
            input_width,
            channel_means,
            optimizer,
            scheduler,
            best_val_acc,
            best_epoch,
            history,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.encode())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}
