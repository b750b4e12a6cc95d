//! Seeded synthetic teleoperation-assembly demonstrations.
//!
//! Each frame carries 16 motion channels sampled at 10 Hz:
//!
//! | channels | content                                   |
//! |----------|-------------------------------------------|
//! | 0..3     | left end-effector position (m)            |
//! | 3..6     | left end-effector orientation (rad)       |
//! | 6..9     | right end-effector position (m)           |
//! | 9..12    | right end-effector orientation (rad)      |
//! | 12..15   | gaze direction (unit vector)              |
//! | 15       | right gripper aperture (0 closed, 1 open) |
//!
//! An episode walks the task's action grammar. Every action is played as an
//! approach, interaction and release phase; within a phase each pose moves
//! linearly from where it was to the phase target, and Gaussian noise is added
//! on top. The support hand holds the task's fixture, so most frames carry
//! some task evidence, while shared tool actions (screws, screwdriver) look
//! alike across tasks.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::{ActionId, TaskId, Taxonomy};

pub const FRAME_RATE_HZ: f64 = 10.0;
pub const N_FEATURES: usize = 16;
pub const GAZE_CHANNELS: std::ops::Range<usize> = 12..15;

const HEAD: [f64; 3] = [0.0, -0.45, 0.55];
const PHASE_FRACTIONS: [f64; 3] = [0.4, 0.35, 0.25];

/// One teleoperation episode with per-frame ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Demonstration {
    pub demo_id: String,
    pub task: String,
    pub rate_hz: f64,
    /// `T` rows of `F` features.
    pub frames: Vec<Vec<f32>>,
    pub action_labels: Vec<String>,
}

impl Demonstration {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    /// Resolves names against `tax` and flattens the frames.
    pub fn encode(&self, tax: &Taxonomy) -> Result<EncodedDemo> {
        let task = tax.task_id(&self.task)?;
        let actions = self
            .action_labels
            .iter()
            .map(|a| tax.action_id(a))
            .collect::<Result<Vec<_>>>()?;
        Ok(EncodedDemo {
            demo_id: self.demo_id.clone(),
            task,
            actions,
            n_features: self.n_features(),
            frames: self.frames.iter().flatten().copied().collect(),
        })
    }
}

/// A demonstration with labels resolved to indices and row-major frames.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedDemo {
    pub demo_id: String,
    pub task: TaskId,
    pub actions: Vec<ActionId>,
    pub n_features: usize,
    pub frames: Vec<f32>,
}

impl EncodedDemo {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.frames[t * self.n_features..(t + 1) * self.n_features]
    }
}

impl AsRef<EncodedDemo> for EncodedDemo {
    fn as_ref(&self) -> &EncodedDemo {
        self
    }
}

/// One grammar production: after `action`, one of `next` follows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrammarRule {
    pub action: String,
    pub next: Vec<String>,
}

/// Missing fields in a config file take their [`Default`] values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub demos_per_task: usize,
    pub feature_noise_std: f64,
    /// Target episode length range in seconds; the walk stops at the first
    /// action boundary past the sampled target.
    pub episode_duration_s: (f64, f64),
    /// Per-action hold duration range in seconds.
    pub duration_range_s: IndexMap<String, (f64, f64)>,
    /// Per-task grammar. The first rule's action starts every episode.
    pub grammar: IndexMap<String, Vec<GrammarRule>>,
}

fn rules(spec: &[(&str, &[&str])]) -> Vec<GrammarRule> {
    spec.iter()
        .map(|(a, next)| GrammarRule {
            action: a.to_string(),
            next: next.iter().map(|s| s.to_string()).collect(),
        })
        .collect()
}

pub const DEFAULT_SEED: u64 = 7;

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig::default_assembly(DEFAULT_SEED)
    }
}

impl GeneratorConfig {
    /// Defaults matched to [`Taxonomy::default_assembly`].
    pub fn default_assembly(seed: u64) -> Self {
        let screws: [(&str, &[&str]); 3] = [
            ("pick_screw", &["place_screw"]),
            ("place_screw", &["pick_screwdriver"]),
            ("pick_screwdriver", &["withdraw_screwdriver"]),
        ];
        let with_screws = |head: &[(&'static str, &'static [&'static str])],
                           after_withdraw: &'static [&'static str]| {
            let mut spec: Vec<(&str, &[&str])> = screws.to_vec();
            spec.push(("withdraw_screwdriver", after_withdraw));
            spec.extend_from_slice(head);
            rules(&spec)
        };

        let mut grammar = IndexMap::new();
        grammar.insert(
            "house".to_string(),
            rules(&[
                ("pick_block", &["place_block"]),
                ("place_block", &["stack_block", "pick_block"]),
                ("stack_block", &["pick_block", "pick_roof"]),
                ("pick_roof", &["place_roof"]),
                ("place_roof", &["pick_block"]),
            ]),
        );
        // car and airplane open with the same screw routine
        grammar.insert(
            "car".to_string(),
            with_screws(
                &[
                    ("pick_wheel", &["place_wheel"]),
                    ("place_wheel", &["fasten_wheel"]),
                    ("fasten_wheel", &["pick_screw", "pick_wheel"]),
                ],
                &["pick_wheel", "pick_screw"],
            ),
        );
        grammar.insert(
            "airplane".to_string(),
            with_screws(
                &[
                    ("pick_wing", &["place_wing"]),
                    ("place_wing", &["fasten_wing"]),
                    ("fasten_wing", &["pick_screw", "pick_wing"]),
                ],
                &["pick_wing", "pick_screw"],
            ),
        );
        grammar.insert(
            "helicopter".to_string(),
            rules(&[
                ("pick_rotor", &["fasten_rotor"]),
                ("fasten_rotor", &["pick_screw"]),
                ("pick_screw", &["place_screw"]),
                ("place_screw", &["pick_screwdriver"]),
                ("pick_screwdriver", &["withdraw_screwdriver"]),
                ("withdraw_screwdriver", &["pick_rotor", "pick_screw"]),
            ]),
        );
        grammar.insert(
            "tank".to_string(),
            rules(&[
                ("pick_track", &["place_track"]),
                ("place_track", &["fasten_track"]),
                ("fasten_track", &["pick_wheel", "pick_block", "pick_track"]),
                ("pick_wheel", &["place_wheel"]),
                ("place_wheel", &["pick_track", "pick_block"]),
                ("pick_block", &["place_block"]),
                ("place_block", &["pick_track", "pick_wheel"]),
            ]),
        );
        grammar.insert(
            "tower".to_string(),
            rules(&[
                ("pick_block", &["stack_block"]),
                ("stack_block", &["pick_block", "pick_screw"]),
                ("pick_screw", &["place_screw"]),
                ("place_screw", &["pick_screwdriver"]),
                ("pick_screwdriver", &["fasten_beam"]),
                ("fasten_beam", &["withdraw_screwdriver"]),
                ("withdraw_screwdriver", &["pick_block"]),
            ]),
        );

        let tax = Taxonomy::default_assembly();
        let duration_range_s = tax
            .action_names()
            .iter()
            .map(|a| {
                let range = if a.starts_with("fasten") { (3.0, 5.5) } else { (2.0, 4.5) };
                (a.clone(), range)
            })
            .collect();

        GeneratorConfig {
            seed,
            demos_per_task: 34,
            feature_noise_std: 0.01,
            episode_duration_s: (80.0, 100.0),
            duration_range_s,
            grammar,
        }
    }

    pub fn validate(&self, tax: &Taxonomy) -> Result<()> {
        if self.demos_per_task == 0 {
            return Err(Error::Config("demos_per_task must be at least 1".into()));
        }
        if !(self.feature_noise_std >= 0.0 && self.feature_noise_std.is_finite()) {
            return Err(Error::Config("feature_noise_std must be a finite value >= 0".into()));
        }
        let (lo, hi) = self.episode_duration_s;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config("episode_duration_s must satisfy 0 < min <= max".into()));
        }
        for (a, &(lo, hi)) in &self.duration_range_s {
            tax.action_id(a).map_err(|_| Error::Config(format!("duration given for unknown action `{a}`")))?;
            if !(lo > 0.0 && hi >= lo) {
                return Err(Error::Config(format!("duration range of `{a}` must satisfy 0 < min <= max")));
            }
        }
        for a in tax.action_names() {
            if !self.duration_range_s.contains_key(a) {
                return Err(Error::Config(format!("no duration range for action `{a}`")));
            }
        }
        for (task, rules) in &self.grammar {
            let t = tax
                .task_id(task)
                .map_err(|_| Error::Config(format!("grammar for unknown task `{task}`")))?;
            if rules.is_empty() {
                return Err(Error::Config(format!("grammar of `{task}` is empty")));
            }
            for rule in rules {
                for name in std::iter::once(&rule.action).chain(&rule.next) {
                    let a = tax
                        .action_id(name)
                        .map_err(|_| Error::Config(format!("grammar of `{task}` uses unknown action `{name}`")))?;
                    if !tax.is_consistent(t, a)? {
                        return Err(Error::Config(format!(
                            "grammar of `{task}` uses `{name}`, which the task does not admit"
                        )));
                    }
                }
                for name in &rule.next {
                    if !rules.iter().any(|r| &r.action == name) {
                        return Err(Error::Config(format!(
                            "grammar of `{task}`: successor `{name}` has no rule"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Pose targets for both arms, gaze fixation and gripper at the end of a phase.
#[derive(Clone, Copy, Debug)]
struct Keyframe {
    left: [f64; 6],
    right: [f64; 6],
    gaze: [f64; 3],
    grip: f64,
}

/// Fixed table layout: where each task's fixture and each part bin sits.
struct Layout;

impl Layout {
    fn fixture(task: &str) -> [f64; 3] {
        match task {
            "house" => [-0.20, 0.30, 0.0],
            "car" => [0.05, 0.32, 0.0],
            "airplane" => [0.12, 0.36, 0.0],
            "helicopter" => [0.25, 0.28, 0.0],
            "tank" => [-0.05, 0.45, 0.0],
            "tower" => [-0.30, 0.48, 0.0],
            other => {
                // deterministic spot for tasks outside the bundled set
                let h = name_hash(other);
                [((h % 61) as f64 / 100.0) - 0.3, 0.25 + ((h / 61) % 31) as f64 / 100.0, 0.0]
            }
        }
    }

    fn bin(part: &str) -> [f64; 3] {
        match part {
            "block" => [-0.40, 0.10, 0.0],
            "roof" => [-0.30, 0.00, 0.0],
            "screw" => [0.35, 0.05, 0.0],
            "screwdriver" => [0.45, 0.15, 0.0],
            "wheel" => [0.20, 0.00, 0.0],
            "wing" => [0.05, -0.05, 0.0],
            "rotor" => [0.40, 0.30, 0.0],
            "track" => [-0.15, -0.05, 0.0],
            "beam" => [-0.45, 0.35, 0.0],
            other => {
                let h = name_hash(other);
                [((h % 81) as f64 / 100.0) - 0.4, ((h / 81) % 41) as f64 / 100.0 - 0.1, 0.0]
            }
        }
    }

    /// Characteristic wrist orientation per part (roll, pitch, yaw).
    fn wrist(part: &str) -> [f64; 3] {
        let h = name_hash(part);
        [
            ((h % 7) as f64 - 3.0) * 0.15,
            1.2 + ((h / 7) % 5) as f64 * 0.08,
            ((h / 35) % 9) as f64 * 0.2 - 0.8,
        ]
    }
}

fn name_hash(s: &str) -> u64 {
    // FNV-1a; only needs to be stable.
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn pose(p: [f64; 3], o: [f64; 3]) -> [f64; 6] {
    [p[0], p[1], p[2], o[0], o[1], o[2]]
}

/// Phase keyframes of `action` performed for `task` at a fixture placed at `fixture`.
fn keyframes(task: &str, action: &str, fixture: [f64; 3], rest_left: [f64; 6]) -> [Keyframe; 3] {
    let (verb, part) = action.split_once('_').unwrap_or((action, action));
    let bin = Layout::bin(part);
    let wrist = Layout::wrist(part);
    let hold = pose(add(fixture, [-0.12, -0.02, 0.06]), [0.0, 0.6, 0.4]);
    let above = |p: [f64; 3], dz: f64| add(p, [0.0, 0.0, dz]);
    let twist = |k: f64| [wrist[0] + k, wrist[1], wrist[2]];
    let task_lift = 0.02 * (name_hash(task) % 5) as f64;

    let kf = |left: [f64; 6], right: [f64; 6], gaze: [f64; 3], grip: f64| Keyframe { left, right, gaze, grip };
    match verb {
        "pick" => [
            kf(hold, pose(above(bin, 0.10), wrist), bin, 1.0),
            kf(hold, pose(above(bin, 0.02), wrist), bin, 0.1),
            kf(hold, pose(above(bin, 0.18 + task_lift), wrist), fixture, 0.1),
        ],
        "place" | "stack" => {
            let h = if verb == "stack" { 0.12 } else { 0.04 };
            [
                kf(hold, pose(above(fixture, h + 0.10), wrist), fixture, 0.1),
                kf(hold, pose(above(fixture, h), wrist), fixture, 0.9),
                kf(rest_left, pose(above(fixture, h + 0.15), wrist), fixture, 0.9),
            ]
        }
        "fasten" => [
            kf(hold, pose(above(fixture, 0.08), twist(0.0)), fixture, 0.3),
            kf(hold, pose(above(fixture, 0.05), twist(1.4)), fixture, 0.2),
            kf(hold, pose(above(fixture, 0.12), twist(0.3)), fixture, 0.5),
        ],
        "withdraw" => [
            kf(hold, pose(above(fixture, 0.15), twist(0.5)), bin, 0.2),
            kf(rest_left, pose(above(bin, 0.05), wrist), bin, 0.9),
            kf(rest_left, pose(above(bin, 0.20), wrist), fixture, 1.0),
        ],
        _ => [
            kf(hold, pose(above(fixture, 0.10), wrist), fixture, 0.5),
            kf(hold, pose(above(fixture, 0.05), wrist), fixture, 0.5),
            kf(rest_left, pose(above(fixture, 0.15), wrist), fixture, 0.5),
        ],
    }
}

fn split_phases(frames: usize) -> [usize; 3] {
    let a = ((frames as f64 * PHASE_FRACTIONS[0]).round() as usize).max(1);
    let b = ((frames as f64 * PHASE_FRACTIONS[1]).round() as usize).max(1);
    let c = frames.saturating_sub(a + b).max(1);
    [a, b, c]
}

fn sample_range(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Generates one demonstration of `task`. Output is a pure function of
/// `(cfg, tax, task, seed)`; `cfg.seed` is not consulted here.
pub fn generate_demo(cfg: &GeneratorConfig, tax: &Taxonomy, task: TaskId, seed: u64) -> Result<Demonstration> {
    let task_name = tax
        .task_names()
        .get(task.0)
        .ok_or_else(|| Error::Lookup {
            kind: "task",
            id: format!("#{}", task.0),
        })?
        .clone();
    let rules = cfg
        .grammar
        .get(&task_name)
        .ok_or_else(|| Error::Config(format!("no grammar for task `{task_name}`")))?;
    let start = rules
        .first()
        .ok_or_else(|| Error::Config(format!("grammar of `{task_name}` is empty")))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.feature_noise_std.max(0.0))
        .map_err(|e| Error::Config(format!("noise: {e}")))?;

    let jitter = [rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), 0.0];
    let fixture = add(Layout::fixture(&task_name), jitter);
    let rest_left = pose(add(fixture, [-0.25, -0.15, 0.15]), [0.0, 0.3, 0.0]);
    let target_frames = (sample_range(&mut rng, cfg.episode_duration_s) * FRAME_RATE_HZ).round() as usize;

    let mut current = Keyframe {
        left: rest_left,
        right: pose([0.15, -0.1, 0.25], [0.0, 0.5, 0.0]),
        gaze: fixture,
        grip: 1.0,
    };
    let mut frames: Vec<Vec<f32>> = Vec::with_capacity(target_frames + 80);
    let mut labels: Vec<String> = Vec::with_capacity(target_frames + 80);

    let mut rule = start;
    loop {
        let range = cfg
            .duration_range_s
            .get(&rule.action)
            .copied()
            .ok_or_else(|| Error::Config(format!("no duration range for action `{}`", rule.action)))?;
        let n = ((sample_range(&mut rng, range) * FRAME_RATE_HZ).round() as usize).max(3);
        let targets = keyframes(&task_name, &rule.action, fixture, rest_left);
        for (phase_len, target) in split_phases(n).into_iter().zip(targets) {
            let from = current;
            for i in 1..=phase_len {
                let s = i as f64 / phase_len as f64;
                let lerp = |a: f64, b: f64| a + (b - a) * s;
                let mut row = Vec::with_capacity(N_FEATURES);
                for k in 0..6 {
                    row.push(lerp(from.left[k], target.left[k]) + noise.sample(&mut rng));
                }
                for k in 0..6 {
                    row.push(lerp(from.right[k], target.right[k]) + noise.sample(&mut rng));
                }
                let mut dir = [0.0; 3];
                for k in 0..3 {
                    dir[k] = lerp(from.gaze[k], target.gaze[k]) + noise.sample(&mut rng) - HEAD[k];
                }
                let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
                row.extend(dir.iter().map(|d| d / norm));
                row.push((lerp(from.grip, target.grip) + noise.sample(&mut rng)).clamp(0.0, 1.0));
                frames.push(row.into_iter().map(|x| x as f32).collect());
                labels.push(rule.action.clone());
            }
            current = target;
        }
        if frames.len() >= target_frames || rule.next.is_empty() {
            break;
        }
        let pick = rng.random_range(0..rule.next.len());
        let next = &rule.next[pick];
        rule = rules
            .iter()
            .find(|r| &r.action == next)
            .ok_or_else(|| Error::Config(format!("successor `{next}` has no rule")))?;
    }

    Ok(Demonstration {
        demo_id: format!("{task_name}-s{seed:016x}"),
        task: task_name,
        rate_hz: FRAME_RATE_HZ,
        frames,
        action_labels: labels,
    })
}

/// Per-demonstration seed; mixes the dataset seed with the (task, index) slot.
pub fn demo_seed(base: u64, task: usize, index: usize) -> u64 {
    // splitmix64 finalizer over the packed slot
    let mut z = base ^ ((task as u64) << 32 | index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `demos_per_task` demonstrations for every task that has a grammar, in
/// taxonomy order. Demo ids are `<task>-<index>`.
pub fn generate_dataset(cfg: &GeneratorConfig, tax: &Taxonomy) -> Result<Vec<Demonstration>> {
    cfg.validate(tax)?;
    let mut out = Vec::new();
    for (t, name) in tax.task_names().iter().enumerate() {
        if !cfg.grammar.contains_key(name) {
            continue;
        }
        for i in 0..cfg.demos_per_task {
            let mut demo = generate_demo(cfg, tax, TaskId(t), demo_seed(cfg.seed, t, i))?;
            demo.demo_id = format!("{name}-{i:03}");
            out.push(demo);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("grammar covers no task of the taxonomy".into()));
    }
    Ok(out)
}

/// Writes one JSON record per line.
pub fn write_dataset(demos: &[Demonstration], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if demos.is_empty() {
        return Err(Error::Schema("refusing to write an empty dataset".into()));
    }
    check_schema(demos)?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for demo in demos {
        serde_json::to_writer(&mut w, demo).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<Demonstration>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut demos = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let demo: Demonstration = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        demos.push(demo);
    }
    if demos.is_empty() {
        return Err(Error::Schema(format!("{} holds no demonstrations", path.display())));
    }
    check_schema(&demos)?;
    Ok(demos)
}

fn check_schema(demos: &[Demonstration]) -> Result<()> {
    let f = demos[0].n_features();
    for d in demos {
        if d.frames.is_empty() || d.frames.len() != d.action_labels.len() {
            return Err(Error::Schema(format!(
                "demonstration `{}` has {} frames and {} labels",
                d.demo_id,
                d.frames.len(),
                d.action_labels.len()
            )));
        }
        if let Some(row) = d.frames.iter().find(|r| r.len() != f) {
            return Err(Error::Schema(format!(
                "demonstration `{}` has a frame of {} features, expected {f}",
                d.demo_id,
                row.len()
            )));
        }
    }
    let mut ids: Vec<&str> = demos.iter().map(|d| d.demo_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Schema(format!("duplicate demo id `{}`", w[0])));
    }
    Ok(())
}

/// Checks every label against `tax`: known task, admissible actions.
pub fn validate_labels(demos: &[Demonstration], tax: &Taxonomy) -> Result<()> {
    for d in demos {
        let enc = d.encode(tax)?;
        for (t, a) in enc.actions.iter().enumerate() {
            if !tax.is_consistent(enc.task, *a)? {
                return Err(Error::Validation(format!(
                    "demonstration `{}` frame {t}: action `{}` is not admissible for task `{}`",
                    d.demo_id, d.action_labels[t], d.task
                )));
            }
        }
    }
    Ok(())
}
