use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use super::{
    plan_segments, Conditioning, Denoiser, LatentBlock, NoiseSchedule, SchedulerError, SegmentPlan, SegmentSpan,
};
use crate::seed::SeedStream;

/// `σ(t) = t / t_max`.
#[inline]
pub fn sigma(level: f64, t_max: f64) -> f64 {
    level / t_max
}

/// Corrupts a clean block to `target_level`:
/// `x_t = (1 − σ)·x_0 + σ·ε` with `ε ~ N(0, I)` drawn from `seed`.
pub fn recorrupt(clean: &LatentBlock, target_level: f64, t_max: f64, seed: u64) -> Result<LatentBlock, SchedulerError> {
    if !(0.0..=t_max).contains(&target_level) {
        return Err(SchedulerError::InvalidLevel {
            level: target_level,
            t_max,
        });
    }
    if clean.level != 0.0 {
        return Err(SchedulerError::InvalidLevel {
            level: clean.level,
            t_max,
        });
    }
    let mut out = clean.clone();
    out.level = target_level;
    if target_level == 0.0 {
        return Ok(out);
    }
    let s = sigma(target_level, t_max);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for x in out.values_mut() {
        let eps: f64 = rng.sample(StandardNormal);
        *x = if target_level == t_max {
            eps
        } else {
            (1.0 - s) * *x + s * eps
        };
    }
    Ok(out)
}

/// Output of one guided prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidedFlow {
    pub flow: Vec<f64>,
    /// Denoiser calls made (1 or 2).
    pub evaluations: usize,
}

/// `w·v(current | history_ahead) + (1 − w)·v(current | history_same)`.
///
/// A single evaluation is made when `w` is 1 or 0, when both history blocks
/// are identical, or when there is no history (the base segment), since the
/// combination then reduces to one term.
pub fn guided_flow(
    denoiser: &dyn Denoiser,
    current: &LatentBlock,
    history_ahead: &LatentBlock,
    history_same: &LatentBlock,
    w: f64,
    conditioning: &Conditioning,
) -> Result<GuidedFlow, SchedulerError> {
    for h in [history_ahead, history_same] {
        if h.channels() != current.channels() {
            return Err(SchedulerError::ShapeMismatch(format!(
                "history has {} channels, current has {}",
                h.channels(),
                current.channels()
            )));
        }
    }
    if history_ahead.frames() != history_same.frames() {
        return Err(SchedulerError::ShapeMismatch("history branches differ in frame count".into()));
    }
    let eval = |h: &LatentBlock| -> Result<Vec<f64>, SchedulerError> {
        let v = denoiser.predict(current, h, conditioning)?;
        if v.len() != current.values().len() {
            return Err(SchedulerError::ShapeMismatch(format!(
                "denoiser returned {} values for {} latents",
                v.len(),
                current.values().len()
            )));
        }
        Ok(v)
    };
    if w == 1.0 || history_ahead.frames() == 0 || history_ahead == history_same {
        return Ok(GuidedFlow {
            flow: eval(history_ahead)?,
            evaluations: 1,
        });
    }
    if w == 0.0 {
        return Ok(GuidedFlow {
            flow: eval(history_same)?,
            evaluations: 1,
        });
    }
    let (ahead, same) = rayon::join(|| eval(history_ahead), || eval(history_same));
    let (ahead, same) = (ahead?, same?);
    Ok(GuidedFlow {
        flow: ahead
            .iter()
            .zip(&same)
            .map(|(a, s)| w * a + (1.0 - w) * s)
            .collect(),
        evaluations: 2,
    })
}

/// One denoising step of one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub segment: usize,
    pub step: usize,
    pub current_level: f64,
    pub history_level: f64,
    /// Noise-level indices (0 = clean) of the current and "ahead" history
    /// blocks in the shared schedule.
    pub current_index: usize,
    pub history_index: usize,
    pub w: f64,
    pub evaluations: usize,
}

/// Denoises `current_init` to level 0 while conditioning on `history_clean`
/// re-corrupted `plan.delta_t` steps ahead. Appends one row per step to
/// `trace`.
#[allow(clippy::too_many_arguments)]
pub fn denoise_segment(
    denoiser: &dyn Denoiser,
    current_init: &LatentBlock,
    history_clean: &LatentBlock,
    schedule: &NoiseSchedule,
    plan: &SegmentPlan,
    conditioning: &Conditioning,
    seeds: &SeedStream,
    trace: &mut Vec<TraceRow>,
) -> Result<LatentBlock, SchedulerError> {
    if schedule.steps() < 1 {
        return Err(SchedulerError::InvalidSchedule("schedule has no denoising step".into()));
    }
    if history_clean.level != 0.0 {
        return Err(SchedulerError::InvalidLevel {
            level: history_clean.level,
            t_max: schedule.t_max(),
        });
    }
    let levels = schedule.levels();
    let t_max = schedule.t_max();
    let last = schedule.steps();
    let segment = conditioning.segment as u64;
    let history_at = |i: usize| {
        recorrupt(
            history_clean,
            levels[i],
            t_max,
            seeds.derive("history", &[segment, schedule.noise_index(i) as u64]),
        )
    };

    let mut x = current_init.clone();
    x.level = levels[0];
    for i in 0..last {
        let ahead_i = (i + plan.delta_t).min(last);
        debug_assert_eq!(
            schedule.noise_index(ahead_i),
            schedule.noise_index(i).saturating_sub(plan.delta_t)
        );
        let ahead = history_at(ahead_i)?;
        let same = history_at(i)?;
        let g = guided_flow(denoiser, &x, &ahead, &same, plan.guidance_scale, conditioning)?;
        let dt = sigma(levels[i + 1], t_max) - sigma(levels[i], t_max);
        for (xv, v) in x.values_mut().iter_mut().zip(&g.flow) {
            *xv += dt * v;
        }
        trace.push(TraceRow {
            segment: conditioning.segment,
            step: i,
            current_level: levels[i],
            history_level: levels[ahead_i],
            current_index: schedule.noise_index(i),
            history_index: schedule.noise_index(ahead_i),
            w: plan.guidance_scale,
            evaluations: g.evaluations,
        });
        x.level = levels[i + 1];
    }
    Ok(x)
}

#[derive(Debug, Clone)]
pub struct AutoregressiveRun {
    pub segments: Vec<SegmentSpan>,
    /// All generated frames, clean.
    pub latents: LatentBlock,
    pub trace: Vec<TraceRow>,
}

/// Generates `total_frames` latent frames: the base segment from noise with
/// no history, then each autoregressive segment conditioned on the last
/// `T*` generated frames.
pub fn run_autoregressive(
    denoiser: &dyn Denoiser,
    total_frames: usize,
    channels: usize,
    plan: &SegmentPlan,
    schedule: &NoiseSchedule,
    seeds: &SeedStream,
) -> Result<AutoregressiveRun, SchedulerError> {
    if channels == 0 {
        return Err(SchedulerError::InvalidConfig("channel count must be positive".into()));
    }
    let segments = plan_segments(total_frames, plan)?;
    let mut latents = LatentBlock::zeros(total_frames, channels);
    let mut trace = Vec::new();
    for (k, span) in segments.iter().enumerate() {
        let frames = span.current.len();
        let mut rng = seeds.rng("init", &[k as u64]);
        let init = LatentBlock::new(
            frames,
            channels,
            (0..frames * channels).map(|_| rng.sample(StandardNormal)).collect(),
            schedule.levels()[0],
        )?;
        let history = latents.slice_frames(span.history.clone());
        let conditioning = Conditioning {
            segment: k,
            frames: span.current.clone(),
        };
        let clean = denoise_segment(denoiser, &init, &history, schedule, plan, &conditioning, seeds, &mut trace)?;
        let start = span.current.start * channels;
        latents.values_mut()[start..start + clean.values().len()].copy_from_slice(clean.values());
    }
    Ok(AutoregressiveRun {
        segments,
        latents,
        trace,
    })
}

/// Writes `segment,step,current_level,history_level,w,evaluations`.
pub fn write_trace_csv(rows: &[TraceRow], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "segment,step,current_level,history_level,w,evaluations")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.segment, r.step, r.current_level, r.history_level, r.w, r.evaluations
        )?;
    }
    Ok(())
}

/// Two noise levels uniform on `[0, t_max]` with `t1 ≤ t2`, for history and
/// current blocks during training.
pub fn training_noise_pair(seed: u64, t_max: f64) -> (f64, f64) {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let a = rng.random_range(0.0..=t_max);
    let b = rng.random_range(0.0..=t_max);
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}
