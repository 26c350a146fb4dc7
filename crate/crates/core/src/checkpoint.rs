//! Model checkpoint format: a binary snapshot of the model configuration and
//! every named parameter tensor, with bit-exact save/load roundtrips.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic    8 bytes  "DRAMCKPT"
//! version  u32      currently 1
//! variant  u8       model variant code
//! backbone u8       0 = tcn, 1 = lstm
//!   tcn:   u32 hidden, u32 kernel, u32 dilation count, count x u32
//!          dilations, u8 residual flag
//!   lstm:  u32 hidden, u32 layers
//! audio    u32      audio feature rows
//! pose     u32      pose rows
//! k        u32      history window length
//! flags    u8 include_current_monadic, u8 detach_attention
//! seed     u64      parameter init seed
//! tensors  u32 count, then per tensor:
//!          u16 name length, name bytes (utf-8),
//!          u8 rank, rank x u32 dims, f64 data (row-major)
//! ```
//!
//! Loading rebuilds the model from the decoded configuration and then
//! overwrites each parameter in declaration order, verifying that names and
//! shapes match what the rebuilt model expects.

use crate::backbone::{BackboneHyper, LstmHyper, TcnHyper};
use crate::dataset::CountedReader;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, Variant};
use crate::tensor::Tensor;
use std::io::{Read, Write};
use std::path::Path;

const CKPT_MAGIC: &[u8; 8] = b"DRAMCKPT";
const CKPT_VERSION: u32 = 1;

pub fn save_model(model: &Model, w: &mut impl Write) -> Result<()> {
    let cfg = &model.config;
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&CKPT_VERSION.to_le_bytes())?;
    w.write_all(&[cfg.variant.code()])?;
    match &cfg.backbone {
        BackboneHyper::Tcn(t) => {
            w.write_all(&[0u8])?;
            w.write_all(&(t.hidden as u32).to_le_bytes())?;
            w.write_all(&(t.kernel as u32).to_le_bytes())?;
            w.write_all(&(t.dilations.len() as u32).to_le_bytes())?;
            for &d in &t.dilations {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            w.write_all(&[t.residual as u8])?;
        }
        BackboneHyper::Lstm(l) => {
            w.write_all(&[1u8])?;
            w.write_all(&(l.hidden as u32).to_le_bytes())?;
            w.write_all(&(l.layers as u32).to_le_bytes())?;
        }
    }
    w.write_all(&(cfg.audio_dim as u32).to_le_bytes())?;
    w.write_all(&(cfg.pose_dim as u32).to_le_bytes())?;
    w.write_all(&(cfg.k as u32).to_le_bytes())?;
    w.write_all(&[cfg.include_current_monadic as u8, cfg.detach_attention as u8])?;
    w.write_all(&cfg.seed.to_le_bytes())?;

    w.write_all(&(model.params.len() as u32).to_le_bytes())?;
    for param in model.params.iter() {
        let name = param.name.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(Error::Data(format!("parameter name too long: {}", param.name)));
        }
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        let shape = param.value.shape();
        w.write_all(&[shape.len() as u8])?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in param.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_model_file(model: &Model, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    save_model(model, &mut w)?;
    use std::io::Write as _;
    w.flush()?;
    Ok(())
}

pub fn load_model(reader: impl Read) -> Result<Model> {
    let mut r = CountedReader::new(reader);
    let mut magic = [0u8; 8];
    r.fill(&mut magic, "magic")?;
    if &magic != CKPT_MAGIC {
        return Err(Error::Format { offset: 0, detail: "bad checkpoint magic".into() });
    }
    let version = r.u32("version")?;
    if version != CKPT_VERSION {
        return Err(Error::Format {
            offset: 8,
            detail: format!("unsupported checkpoint version {version}"),
        });
    }
    let variant_off = r.offset();
    let variant_code = r.u8("variant")?;
    let variant = Variant::from_code(variant_code).ok_or_else(|| Error::Format {
        offset: variant_off,
        detail: format!("unknown variant code {variant_code}"),
    })?;
    let kind_off = r.offset();
    let backbone = match r.u8("backbone kind")? {
        0 => {
            let hidden = r.u32("tcn hidden")? as usize;
            let kernel = r.u32("tcn kernel")? as usize;
            let n = r.u32("tcn dilation count")? as usize;
            if n > 64 {
                return Err(Error::Format {
                    offset: kind_off,
                    detail: format!("implausible dilation count {n}"),
                });
            }
            let mut dilations = Vec::with_capacity(n);
            for _ in 0..n {
                dilations.push(r.u32("tcn dilation")? as usize);
            }
            let residual = r.u8("tcn residual flag")? != 0;
            BackboneHyper::Tcn(TcnHyper { hidden, kernel, dilations, residual })
        }
        1 => {
            let hidden = r.u32("lstm hidden")? as usize;
            let layers = r.u32("lstm layers")? as usize;
            BackboneHyper::Lstm(LstmHyper { hidden, layers })
        }
        other => {
            return Err(Error::Format {
                offset: kind_off,
                detail: format!("unknown backbone kind {other}"),
            })
        }
    };
    let audio_dim = r.u32("audio_dim")? as usize;
    let pose_dim = r.u32("pose_dim")? as usize;
    let k = r.u32("window k")? as usize;
    let include_current_monadic = r.u8("include_current_monadic")? != 0;
    let detach_attention = r.u8("detach_attention")? != 0;
    let seed = r.u64("seed")?;

    let config = ModelConfig {
        variant,
        backbone,
        audio_dim,
        pose_dim,
        k,
        include_current_monadic,
        detach_attention,
        seed,
    };
    let mut model = Model::new(config).map_err(|e| Error::Format {
        offset: variant_off,
        detail: format!("checkpoint configuration does not build: {e}"),
    })?;

    let count = r.u32("tensor count")? as usize;
    if count != model.params.len() {
        return Err(Error::Format {
            offset: r.offset() - 4,
            detail: format!(
                "checkpoint has {count} tensors but the model declares {}",
                model.params.len()
            ),
        });
    }
    for id in 0..count {
        let name_off = r.offset();
        let name_len = r.u16("tensor name length")? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.fill(&mut name_bytes, "tensor name")?;
        let name = String::from_utf8(name_bytes).map_err(|_| Error::Format {
            offset: name_off,
            detail: "tensor name is not valid utf-8".into(),
        })?;
        let rank = r.u8("tensor rank")? as usize;
        if rank > 8 {
            return Err(Error::Format {
                offset: r.offset() - 1,
                detail: format!("implausible tensor rank {rank}"),
            });
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("tensor dim")? as usize);
        }
        {
            let expect = model.params.get(id);
            if expect.name != name {
                return Err(Error::Format {
                    offset: name_off,
                    detail: format!("tensor {id} is named {name:?}, expected {:?}", expect.name),
                });
            }
            if expect.value.shape() != shape.as_slice() {
                return Err(Error::Format {
                    offset: name_off,
                    detail: format!(
                        "tensor {name:?} has shape {shape:?}, expected {:?}",
                        expect.value.shape()
                    ),
                });
            }
        }
        let len = shape.iter().product::<usize>();
        let data = r.f64_block(len, "tensor data")?;
        model.params.get_mut(id).value = Tensor::from_vec(&shape, data)?;
    }
    Ok(model)
}

pub fn load_model_file(path: &Path) -> Result<Model> {
    let file = std::fs::File::open(path)?;
    load_model(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn scrambled_model(config: ModelConfig) -> Model {
        // init leaves structured values; decorrelate them so a roundtrip
        // can't pass by accident
        let mut model = Model::new(config).unwrap();
        let mut rng = rng::chacha(1234);
        for p in model.params.iter_mut() {
            for v in p.value.data_mut() {
                *v = rng::normal(&mut rng);
            }
        }
        model
    }

    fn assert_bits_equal(a: &Model, b: &Model) {
        assert_eq!(a.config, b.config);
        assert_eq!(a.params.len(), b.params.len());
        for (pa, pb) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(pa.name, pb.name);
            assert_eq!(pa.value.shape(), pb.value.shape());
            for (x, y) in pa.value.data().iter().zip(pb.value.data()) {
                assert_eq!(x.to_bits(), y.to_bits(), "param {}", pa.name);
            }
        }
    }

    #[test]
    fn roundtrip_is_bit_exact_for_every_variant_and_backbone() {
        use crate::model::ALL_VARIANTS;
        for &variant in &ALL_VARIANTS {
            for backbone in [
                BackboneHyper::Tcn(TcnHyper { hidden: 6, kernel: 2, dilations: vec![1, 2], residual: true }),
                BackboneHyper::Lstm(LstmHyper { hidden: 5, layers: 2 }),
            ] {
                let model = scrambled_model(ModelConfig {
                    variant,
                    backbone,
                    audio_dim: 3,
                    pose_dim: 8,
                    k: 8,
                    seed: 42,
                    ..Default::default()
                });
                let mut bytes = Vec::new();
                save_model(&model, &mut bytes).unwrap();
                let loaded = load_model(bytes.as_slice()).unwrap();
                assert_bits_equal(&model, &loaded);
            }
        }
    }

    #[test]
    fn file_roundtrip() {
        let dir = std::env::temp_dir().join("ckpt_file_roundtrip_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        let model = scrambled_model(ModelConfig {
            audio_dim: 3,
            pose_dim: 8,
            k: 16,
            backbone: BackboneHyper::Tcn(TcnHyper {
                hidden: 4,
                kernel: 2,
                dilations: vec![1, 2, 4],
                residual: true,
            }),
            ..Default::default()
        });
        save_model_file(&model, &path).unwrap();
        let loaded = load_model_file(&path).unwrap();
        assert_bits_equal(&model, &loaded);
        std::fs::remove_file(&path).unwrap();
    }

    fn sample_bytes() -> Vec<u8> {
        let model = scrambled_model(ModelConfig {
            variant: Variant::Dram,
            audio_dim: 2,
            pose_dim: 4,
            k: 4,
            backbone: BackboneHyper::Lstm(LstmHyper { hidden: 3, layers: 1 }),
            ..Default::default()
        });
        let mut bytes = Vec::new();
        save_model(&model, &mut bytes).unwrap();
        bytes
    }

    #[test]
    fn corrupted_magic_reports_offset_zero() {
        let mut bytes = sample_bytes();
        bytes[0] ^= 0xFF;
        match load_model(bytes.as_slice()) {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("expected format error at offset 0, got {other:?}"),
        }
    }

    #[test]
    fn unknown_variant_code_reports_its_offset() {
        let mut bytes = sample_bytes();
        bytes[12] = 99; // variant byte sits right after magic + version
        match load_model(bytes.as_slice()) {
            Err(Error::Format { offset: 12, detail }) => {
                assert!(detail.contains("variant"), "{detail}")
            }
            other => panic!("expected format error at offset 12, got {other:?}"),
        }
    }

    #[test]
    fn truncated_tensor_data_reports_end_of_file() {
        let bytes = sample_bytes();
        let cut = &bytes[..bytes.len() - 5];
        match load_model(cut) {
            Err(Error::Format { offset, detail }) => {
                // offset points at the start of the read that ran out
                assert!(offset > 0 && offset < bytes.len() as u64, "offset {offset}");
                assert!(detail.contains("end of file"), "{detail}");
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn renamed_tensor_is_rejected() {
        let model = scrambled_model(ModelConfig {
            variant: Variant::AvatarAudioOnly,
            audio_dim: 2,
            pose_dim: 4,
            k: 4,
            backbone: BackboneHyper::Lstm(LstmHyper { hidden: 3, layers: 1 }),
            ..Default::default()
        });
        let mut bytes = Vec::new();
        save_model(&model, &mut bytes).unwrap();
        // first tensor name is "net.layer0.w_ih"; flip one name byte
        let pos = bytes.windows(3).position(|w| w == b"net").unwrap();
        bytes[pos] = b'x';
        match load_model(bytes.as_slice()) {
            Err(Error::Format { detail, .. }) => assert!(detail.contains("named"), "{detail}"),
            other => panic!("expected name mismatch, got {other:?}"),
        }
    }

    #[test]
    fn loaded_model_steps_identically() {
        use crate::tape::Tape;
        use crate::tensor::Tensor;

        let cfg = ModelConfig {
            audio_dim: 3,
            pose_dim: 8,
            k: 8,
            backbone: BackboneHyper::Tcn(TcnHyper {
                hidden: 4,
                kernel: 2,
                dilations: vec![1, 2],
                residual: true,
            }),
            ..Default::default()
        };
        let model = scrambled_model(cfg.clone());
        let mut bytes = Vec::new();
        save_model(&model, &mut bytes).unwrap();
        let loaded = load_model(bytes.as_slice()).unwrap();

        let mut rng = rng::chacha(5);
        let windows: Vec<Tensor> = [3usize, 8, 3, 8]
            .iter()
            .map(|&rows| {
                let data: Vec<f64> = (0..rows * cfg.k).map(|_| rng::normal(&mut rng)).collect();
                Tensor::from_vec(&[rows, cfg.k], data).unwrap()
            })
            .collect();
        let hist = {
            let data: Vec<f64> = (0..cfg.pose_dim * (cfg.k - 1)).map(|_| rng::normal(&mut rng)).collect();
            Tensor::from_vec(&[cfg.pose_dim, cfg.k - 1], data).unwrap()
        };

        let run = |m: &Model| -> Vec<u64> {
            let mut tape = Tape::new();
            let leases = tape.register_params(&m.params);
            let w = crate::model::StepWindows {
                avatar_audio: tape.leaf(windows[0].clone()),
                avatar_pose: tape.leaf(windows[1].clone()),
                human_audio: tape.leaf(windows[2].clone()),
                human_pose: tape.leaf(windows[3].clone()),
                monadic_history: Some(tape.leaf(hist.clone())),
            };
            let out = m.step(&mut tape, &leases, &w).unwrap();
            tape.value(out.prediction).data().iter().map(|v| v.to_bits()).collect()
        };
        assert_eq!(run(&model), run(&loaded));
    }
}
