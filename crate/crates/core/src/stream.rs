//! Synthetic non-i.i.d. video-like benchmark.
//!
//! Every class is a two-component oriented sinusoidal texture with its own
//! colours; objects perturb the class parameters and add a fixed pattern;
//! sessions fix phase, brightness, contrast, colour cast, noise level and a
//! slow drift shared by all their frames. Frames of one session are
//! therefore strongly correlated while sessions of the same object differ.

use std::f32::consts::PI;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binfmt::{read_tensor, write_tensor};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Chroma magnitude of each class's colour tint.
const TINT: f32 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub initial_classes: usize,
    pub new_classes: usize,
    pub objects_per_class: usize,
    pub sessions_per_object: usize,
    pub train_sessions: usize,
    pub frames_per_experience: usize,
    pub image_size: usize,
    pub channels: usize,
    pub seed: u64,
}

impl StreamSpec {
    /// Small default used by the harness and the acceptance suite.
    pub fn desk() -> Self {
        StreamSpec {
            initial_classes: 6,
            new_classes: 3,
            objects_per_class: 2,
            sessions_per_object: 4,
            train_sessions: 3,
            frames_per_experience: 30,
            image_size: 16,
            channels: 3,
            seed: 0,
        }
    }

    /// Counts of the 10 + 5 category benchmark: 25 new objects, 12 sessions
    /// each, 9 for training.
    pub fn full_scale() -> Self {
        StreamSpec {
            initial_classes: 10,
            new_classes: 5,
            objects_per_class: 5,
            sessions_per_object: 12,
            train_sessions: 9,
            frames_per_experience: 100,
            ..StreamSpec::desk()
        }
    }

    pub fn total_classes(&self) -> usize {
        self.initial_classes + self.new_classes
    }

    pub fn stream_len(&self) -> usize {
        self.new_classes * self.objects_per_class * self.train_sessions
    }

    pub fn frame_shape(&self) -> Vec<usize> {
        vec![self.channels, self.image_size, self.image_size]
    }

    pub fn validate(&self) -> Result<()> {
        // `new_classes` may be 0: the stream is then empty.
        let counts = [
            self.initial_classes,
            self.objects_per_class,
            self.sessions_per_object,
            self.train_sessions,
            self.frames_per_experience,
            self.channels,
        ];
        if counts.contains(&0) {
            return Err(Error::Config(format!("stream spec counts must be >= 1: {self:?}")));
        }
        if self.train_sessions >= self.sessions_per_object {
            return Err(Error::Config(format!(
                "train_sessions ({}) must be below sessions_per_object ({})",
                self.train_sessions, self.sessions_per_object
            )));
        }
        if self.image_size < 8 {
            return Err(Error::Config(format!("image size {} is below 8", self.image_size)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SessionKey {
    pub class: usize,
    pub object: usize,
    pub session: usize,
}

#[derive(Debug, Clone)]
struct Wave {
    angle: f32,
    freq: f32,
    color: [f32; 3],
}

#[derive(Debug, Clone)]
struct ObjectLook {
    waves: [Wave; 2],
    tint: [f32; 3],
    pattern: Vec<f32>,
}

#[derive(Debug, Clone, Copy)]
struct SessionLook {
    phase: [f32; 2],
    drift: [f32; 2],
    brightness: f32,
    gain: f32,
    noise: f32,
    cast: [f32; 3],
    seed: u64,
}

/// Procedural dataset description; frames are rendered on demand and are a
/// pure function of `(spec, seed)`.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    spec: StreamSpec,
    seed: u64,
    objects: Vec<Vec<ObjectLook>>,
    sessions: Vec<Vec<Vec<SessionLook>>>,
}

fn random_color<R: Rng>(rng: &mut R) -> [f32; 3] {
    [
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    ]
}

/// Largest step up to `n / 2` that is coprime with `n`, so stepping through
/// slots visits all of them while moving neighbours far apart.
fn stride_for(n: usize) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    (1..=n / 2).rev().find(|&k| gcd(k, n) == 1).unwrap_or(1)
}

fn gauss<R: Rng>(rng: &mut R) -> f32 {
    // Box-Muller
    let u1: f32 = rng.gen_range(f32::EPSILON..1.0);
    let u2: f32 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

impl SyntheticDataset {
    pub fn generate(spec: &StreamSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_da7a);
        let classes = spec.total_classes();
        let (s, ch) = (spec.image_size, spec.channels);
        let mut objects = Vec::with_capacity(classes);
        let mut sessions = Vec::with_capacity(classes);
        for c in 0..classes {
            // spread orientations, frequencies and hues; orientation slots
            // are a stride permutation of the hue slots, so no two classes
            // are neighbours in both
            let slot = (c * stride_for(classes)) % classes;
            let base = [
                Wave {
                    angle: PI * (slot as f32 + rng.gen_range(0.0..0.5)) / classes as f32,
                    freq: 1.2 + 2.8 * ((c as f32 * 0.618_034) % 1.0),
                    color: random_color(&mut rng),
                },
                Wave {
                    angle: rng.gen_range(0.0..PI),
                    freq: rng.gen_range(1.0..4.0),
                    color: random_color(&mut rng),
                },
            ];
            // hues evenly spaced on the chroma plane, orthogonal to grey
            let hue = 2.0 * PI * (c as f32 + rng.gen_range(-0.15..0.15)) / classes as f32;
            let (u, v) = ([0.707, -0.707, 0.0], [0.408, 0.408, -0.816]);
            let tint: [f32; 3] = std::array::from_fn(|k| TINT * (hue.cos() * u[k] + hue.sin() * v[k]));
            let mut objs = Vec::with_capacity(spec.objects_per_class);
            let mut sess = Vec::with_capacity(spec.objects_per_class);
            for _ in 0..spec.objects_per_class {
                let waves = base.clone().map(|w| Wave {
                    angle: w.angle + 0.1 * gauss(&mut rng),
                    freq: w.freq * rng.gen_range(0.92..1.08),
                    color: w.color.map(|v| v + 0.2 * gauss(&mut rng)),
                });
                let pw = Wave {
                    angle: rng.gen_range(0.0..PI),
                    freq: rng.gen_range(0.3..1.0),
                    color: random_color(&mut rng),
                };
                let pphase = rng.gen_range(0.0..2.0 * PI);
                let mut pattern = vec![0.0; ch * s * s];
                for k in 0..ch {
                    for y in 0..s {
                        for x in 0..s {
                            pattern[(k * s + y) * s + x] = 0.2 * pw.color[k % 3] * wave_at(&pw, x, y, s, pphase);
                        }
                    }
                }
                let tint = tint.map(|v| v + 0.1 * gauss(&mut rng));
                objs.push(ObjectLook { waves, tint, pattern });
                let looks = (0..spec.sessions_per_object)
                    .map(|_| SessionLook {
                        phase: [rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI)],
                        drift: [rng.gen_range(-0.03..0.03), rng.gen_range(-0.03..0.03)],
                        brightness: rng.gen_range(-0.15..0.15),
                        gain: rng.gen_range(0.8..1.2),
                        noise: rng.gen_range(0.05..0.2),
                        cast: [
                            rng.gen_range(-0.1..0.1),
                            rng.gen_range(-0.1..0.1),
                            rng.gen_range(-0.1..0.1),
                        ],
                        seed: rng.gen(),
                    })
                    .collect();
                sess.push(looks);
            }
            objects.push(objs);
            sessions.push(sess);
        }
        Ok(SyntheticDataset {
            spec: *spec,
            seed,
            objects,
            sessions,
        })
    }

    pub fn spec(&self) -> &StreamSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// All frames of one session: `[frames, channels, size, size]`.
    pub fn render_session(&self, key: SessionKey) -> Result<Tensor> {
        let sp = &self.spec;
        if key.class >= sp.total_classes()
            || key.object >= sp.objects_per_class
            || key.session >= sp.sessions_per_object
        {
            return Err(Error::Argument(format!("no such session {key:?}")));
        }
        let obj = &self.objects[key.class][key.object];
        let look = self.sessions[key.class][key.object][key.session];
        let (s, ch, n) = (sp.image_size, sp.channels, sp.frames_per_experience);
        let mut rng = ChaCha8Rng::seed_from_u64(look.seed);
        let mut data = Vec::with_capacity(n * ch * s * s);
        for t in 0..n {
            let phase = [
                look.phase[0] + look.drift[0] * t as f32 + 0.05 * gauss(&mut rng),
                look.phase[1] + look.drift[1] * t as f32 + 0.05 * gauss(&mut rng),
            ];
            let flicker = 0.02 * gauss(&mut rng);
            for k in 0..ch {
                for y in 0..s {
                    for x in 0..s {
                        let tex = obj.waves[0].color[k % 3] * wave_at(&obj.waves[0], x, y, s, phase[0])
                            + 0.5 * obj.waves[1].color[k % 3] * wave_at(&obj.waves[1], x, y, s, phase[1])
                            + obj.tint[k % 3]
                            + obj.pattern[(k * s + y) * s + x];
                        let v = look.gain * tex
                            + look.brightness
                            + look.cast[k % 3]
                            + flicker
                            + look.noise * gauss(&mut rng);
                        data.push(v);
                    }
                }
            }
        }
        let mut shape = vec![n];
        shape.extend(sp.frame_shape());
        Tensor::new(shape, data)
    }
}

fn wave_at(w: &Wave, x: usize, y: usize, size: usize, phase: f32) -> f32 {
    let u = (x as f32 * w.angle.cos() + y as f32 * w.angle.sin()) / size as f32;
    (2.0 * PI * w.freq * u + phase).sin()
}

/// One single-class, single-session training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub index: usize,
    pub key: SessionKey,
    pub frames: Tensor,
}

impl Experience {
    pub fn class(&self) -> usize {
        self.key.class
    }

    pub fn len(&self) -> usize {
        self.frames.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.batch() == 0
    }
}

/// Frames with per-frame labels and session provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub frames: Tensor,
    pub labels: Vec<usize>,
    pub sessions: Vec<SessionKey>,
}

impl LabeledSet {
    fn from_sessions(dataset: &SyntheticDataset, keys: &[SessionKey]) -> Result<Self> {
        let sp = dataset.spec();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut sessions = Vec::new();
        for &k in keys {
            let t = dataset.render_session(k)?;
            labels.extend(std::iter::repeat_n(k.class, t.batch()));
            sessions.extend(std::iter::repeat_n(k, t.batch()));
            data.extend(t.into_data());
        }
        let mut shape = vec![labels.len()];
        shape.extend(sp.frame_shape());
        Ok(LabeledSet {
            frames: Tensor::new(shape, data)?,
            labels,
            sessions,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows whose label satisfies `keep`.
    pub fn filter(&self, keep: impl Fn(usize) -> bool) -> LabeledSet {
        let rows: Vec<usize> = (0..self.len()).filter(|&i| keep(self.labels[i])).collect();
        LabeledSet {
            frames: self.frames.select(&rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            sessions: rows.iter().map(|&i| self.sessions[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub spec: StreamSpec,
    pub order_seed: u64,
    pub pretrain: LabeledSet,
    pub experiences: Vec<Experience>,
    pub test: LabeledSet,
}

/// Orders the new-class training sessions.
///
/// New class `k` (in id order) makes its first appearance in the `k`-th of
/// `new_classes` equal stream segments. Because every new class contributes
/// the same number of sessions and the stream holds nothing else, that
/// constraint pins each class to its own segment; only the order of
/// objects and sessions inside a segment is random.
pub fn plan_stream(spec: &StreamSpec, seed: u64) -> Result<Vec<SessionKey>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0b5e_55ed);
    let mut plan = Vec::with_capacity(spec.stream_len());
    for k in 0..spec.new_classes {
        let class = spec.initial_classes + k;
        let mut block: Vec<SessionKey> = (0..spec.objects_per_class)
            .flat_map(|object| (0..spec.train_sessions).map(move |session| SessionKey { class, object, session }))
            .collect();
        block.shuffle(&mut rng);
        plan.extend(block);
    }
    Ok(plan)
}

pub fn generate_stream(dataset: &SyntheticDataset, seed: u64) -> Result<Stream> {
    let spec = *dataset.spec();
    let plan = plan_stream(&spec, seed)?;
    let pretrain_keys: Vec<SessionKey> = (0..spec.initial_classes)
        .flat_map(|class| {
            (0..spec.objects_per_class).flat_map(move |object| {
                (0..spec.train_sessions).map(move |session| SessionKey { class, object, session })
            })
        })
        .collect();
    let test_keys: Vec<SessionKey> = (0..spec.total_classes())
        .flat_map(|class| {
            (0..spec.objects_per_class).flat_map(move |object| {
                (spec.train_sessions..spec.sessions_per_object).map(move |session| SessionKey {
                    class,
                    object,
                    session,
                })
            })
        })
        .collect();
    let experiences = plan
        .into_iter()
        .enumerate()
        .map(|(index, key)| {
            Ok(Experience {
                index,
                key,
                frames: dataset.render_session(key)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Stream {
        spec,
        order_seed: seed,
        pretrain: LabeledSet::from_sessions(dataset, &pretrain_keys)?,
        experiences,
        test: LabeledSet::from_sessions(dataset, &test_keys)?,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ExperienceEntry {
    index: usize,
    class: usize,
    object: usize,
    session: usize,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct StreamManifest {
    format: String,
    version: u32,
    spec: StreamSpec,
    dataset_seed: u64,
    order_seed: u64,
    pretrain: SetEntry,
    test: SetEntry,
    experiences: Vec<ExperienceEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SetEntry {
    file: String,
    sessions: Vec<SessionKey>,
}

fn write_tensor_file(path: &Path, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

fn run_lengths(keys: &[SessionKey]) -> Vec<SessionKey> {
    let mut out: Vec<SessionKey> = Vec::new();
    for k in keys {
        if out.last() != Some(k) {
            out.push(*k);
        }
    }
    out
}

impl Stream {
    /// Writes `stream.json` plus one tensor file per experience and one each
    /// for the pretraining and test sets.
    pub fn export(&self, dir: &Path, dataset_seed: u64) -> Result<()> {
        fs::create_dir_all(dir.join("experiences"))?;
        write_tensor_file(&dir.join("pretrain.bin"), &self.pretrain.frames)?;
        write_tensor_file(&dir.join("test.bin"), &self.test.frames)?;
        let mut entries = Vec::with_capacity(self.experiences.len());
        for e in &self.experiences {
            let file = format!("experiences/{:04}.bin", e.index);
            write_tensor_file(&dir.join(&file), &e.frames)?;
            entries.push(ExperienceEntry {
                index: e.index,
                class: e.key.class,
                object: e.key.object,
                session: e.key.session,
                file,
            });
        }
        let manifest = StreamManifest {
            format: "edgecl-stream".into(),
            version: 1,
            spec: self.spec,
            dataset_seed,
            order_seed: self.order_seed,
            pretrain: SetEntry {
                file: "pretrain.bin".into(),
                sessions: run_lengths(&self.pretrain.sessions),
            },
            test: SetEntry {
                file: "test.bin".into(),
                sessions: run_lengths(&self.test.sessions),
            },
            experiences: entries,
        };
        fs::write(dir.join("stream.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn import(dir: &Path) -> Result<Self> {
        let manifest: StreamManifest = serde_json::from_str(&fs::read_to_string(dir.join("stream.json"))?)?;
        if manifest.format != "edgecl-stream" || manifest.version != 1 {
            return Err(Error::Format("not an edgecl stream directory".into()));
        }
        let spec = manifest.spec;
        let read = |file: &str| -> Result<Tensor> { read_tensor(&mut BufReader::new(fs::File::open(dir.join(file))?)) };
        let set = |entry: &SetEntry| -> Result<LabeledSet> {
            let frames = read(&entry.file)?;
            let per = spec.frames_per_experience;
            let sessions: Vec<SessionKey> = entry
                .sessions
                .iter()
                .flat_map(|k| std::iter::repeat_n(*k, per))
                .collect();
            if sessions.len() != frames.batch() {
                return Err(Error::Format(format!(
                    "{} frame count does not match its sessions",
                    entry.file
                )));
            }
            Ok(LabeledSet {
                labels: sessions.iter().map(|k| k.class).collect(),
                sessions,
                frames,
            })
        };
        let experiences = manifest
            .experiences
            .iter()
            .map(|e| {
                Ok(Experience {
                    index: e.index,
                    key: SessionKey {
                        class: e.class,
                        object: e.object,
                        session: e.session,
                    },
                    frames: read(&e.file)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Stream {
            spec,
            order_seed: manifest.order_seed,
            pretrain: set(&manifest.pretrain)?,
            experiences,
            test: set(&manifest.test)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> StreamSpec {
        StreamSpec {
            initial_classes: 2,
            new_classes: 2,
            objects_per_class: 2,
            sessions_per_object: 4,
            train_sessions: 3,
            frames_per_experience: 5,
            image_size: 8,
            channels: 3,
            seed: 1,
        }
    }

    #[test]
    fn spec_validation() {
        let mut s = tiny();
        s.image_size = 7;
        assert!(matches!(SyntheticDataset::generate(&s, 0), Err(Error::Config(_))));
        let mut s = tiny();
        s.train_sessions = 4;
        assert!(s.validate().is_err());
        let mut s = tiny();
        s.initial_classes = 0;
        assert!(s.validate().is_err());
        let mut s = tiny();
        s.new_classes = 0;
        assert!(s.validate().is_ok());
    }

    #[test]
    fn same_seed_same_frames() {
        let a = SyntheticDataset::generate(&tiny(), 4).unwrap();
        let b = SyntheticDataset::generate(&tiny(), 4).unwrap();
        let key = SessionKey {
            class: 3,
            object: 1,
            session: 2,
        };
        assert_eq!(a.render_session(key).unwrap(), b.render_session(key).unwrap());
        let c = SyntheticDataset::generate(&tiny(), 5).unwrap();
        assert_ne!(a.render_session(key).unwrap(), c.render_session(key).unwrap());
    }

    #[test]
    fn desk_counts() {
        let spec = StreamSpec {
            new_classes: 2,
            ..tiny()
        };
        let ds = SyntheticDataset::generate(&spec, 0).unwrap();
        let s = generate_stream(&ds, 0).unwrap();
        assert_eq!(s.experiences.len(), 2 * 2 * 3);
        assert_eq!(s.pretrain.len(), 2 * 2 * 3 * 5);
        assert_eq!(s.test.len(), 4 * 2 * 5);
        for e in &s.experiences {
            assert!(e.class() >= spec.initial_classes);
            assert_eq!(e.len(), 5);
        }
    }

    #[test]
    fn export_import_round_trip() {
        let ds = SyntheticDataset::generate(&tiny(), 2).unwrap();
        let s = generate_stream(&ds, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        s.export(dir.path(), 2).unwrap();
        assert!(dir.path().join("experiences/0000.bin").exists());
        assert_eq!(Stream::import(dir.path()).unwrap(), s);
    }
}
