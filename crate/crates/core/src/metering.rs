//! Waveform-level active/reactive power measurement.
//!
//! Two meters are compared. The integrating meter averages instantaneous
//! power over the last fundamental period and obtains Q by delaying the
//! voltage a quarter period, which captures every harmonic product present.
//! The nameplate meter multiplies total RMS values by `cos θ` / `sin θ` of
//! the fundamental displacement angle, i.e. it assumes clean sinusoids.
//!
//! Waveforms follow `x(t) = √2·X·sin(ωt + φ) + Σ_h √2·X·m_h·sin(hωt + φ_h)`.
//! Angles use the usual convention: θ = φ_v − φ_i, positive for lagging
//! current, which gives positive Q.

use std::f64::consts::{PI, SQRT_2};
use std::io::{self, BufRead, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FUNDAMENTAL_HZ: f64 = 50.0;
/// Minimum samples per cycle of the highest synthesized component.
pub const MIN_OVERSAMPLING: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub order: u32,
    /// RMS as a fraction of the fundamental RMS.
    pub magnitude: f64,
    pub phase: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HarmonicSpec(pub Vec<Harmonic>);

impl HarmonicSpec {
    pub fn none() -> Self {
        HarmonicSpec(Vec::new())
    }

    pub fn single(order: u32, magnitude: f64, phase: f64) -> Self {
        HarmonicSpec(vec![Harmonic { order, magnitude, phase }])
    }

    /// Synthetic inverter distortion: 3rd 5 %, 5th 3 %, 7th 2 %, zero phase.
    /// A stand-in shape, not a measured spectrum.
    pub fn inverter_default() -> Self {
        HarmonicSpec(vec![
            Harmonic { order: 3, magnitude: 0.05, phase: 0.0 },
            Harmonic { order: 5, magnitude: 0.03, phase: 0.0 },
            Harmonic { order: 7, magnitude: 0.02, phase: 0.0 },
        ])
    }

    pub fn highest_order(&self) -> u32 {
        self.0.iter().map(|h| h.order).max().unwrap_or(1).max(1)
    }

    pub fn validate(&self) -> Result<(), MeteringError> {
        for (k, h) in self.0.iter().enumerate() {
            if h.order < 2 {
                return Err(MeteringError::BadHarmonic(format!("order {} must be ≥ 2", h.order)));
            }
            if !(h.magnitude.is_finite() && h.magnitude >= 0.0) || !h.phase.is_finite() {
                return Err(MeteringError::BadHarmonic(format!("order {}: invalid magnitude/phase", h.order)));
            }
            if self.0[..k].iter().any(|o| o.order == h.order) {
                return Err(MeteringError::BadHarmonic(format!("order {} listed twice", h.order)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledWaveform {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    pub fundamental: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PqMethod {
    Integration,
    Fundamental,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PQReading {
    pub p: f64,
    pub q: f64,
    pub method: PqMethod,
}

#[derive(Debug, Error)]
pub enum MeteringError {
    #[error("invalid harmonic spec: {0}")]
    BadHarmonic(String),
    #[error("sample rate {sample_rate} Hz is below {MIN_OVERSAMPLING}× the highest component at {highest} Hz")]
    Aliasing { sample_rate: f64, highest: f64 },
    #[error("sample rate {sample_rate} Hz is not an integer multiple of {fundamental} Hz")]
    NonIntegerPeriod { sample_rate: f64, fundamental: f64 },
    #[error("{0} samples per period is not divisible by 4 (quarter-period shift)")]
    QuarterShift(usize),
    #[error("waveform must span a whole, non-zero number of periods ({len} samples, {per_period} per period)")]
    PartialPeriod { len: usize, per_period: usize },
    #[error("voltage and current streams differ: {0}")]
    Mismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl SampledWaveform {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples_per_period(&self) -> Result<usize, MeteringError> {
        samples_per_period(self.sample_rate, self.fundamental)
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|x| x * x).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    pub fn scaled(&self, factor: f64) -> SampledWaveform {
        SampledWaveform { samples: self.samples.iter().map(|x| x * factor).collect(), ..self.clone() }
    }

    /// Fundamental-frequency phasor by single-bin projection over whole
    /// periods, scaled to RMS. Phase is relative to a cosine reference.
    pub fn fundamental_phasor(&self) -> Result<Complex64, MeteringError> {
        let n = self.samples_per_period()?;
        let periods = self.len() / n;
        if periods == 0 || !self.len().is_multiple_of(n) {
            return Err(MeteringError::PartialPeriod { len: self.len(), per_period: n });
        }
        let step = 2.0 * PI / n as f64;
        let acc: Complex64 =
            self.samples.iter().enumerate().map(|(k, x)| Complex64::from_polar(*x, -step * (k % n) as f64)).sum();
        Ok(acc * (SQRT_2 / self.len() as f64))
    }
}

fn samples_per_period(sample_rate: f64, fundamental: f64) -> Result<usize, MeteringError> {
    if !(sample_rate > 0.0 && fundamental > 0.0) {
        return Err(MeteringError::InvalidParameter("rates must be positive".into()));
    }
    let ratio = sample_rate / fundamental;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-9 * ratio || n < 1.0 {
        return Err(MeteringError::NonIntegerPeriod { sample_rate, fundamental });
    }
    Ok(n as usize)
}

pub fn synthesize(
    rms_fund: f64,
    phase: f64,
    harmonics: &HarmonicSpec,
    sample_rate: f64,
    periods: usize,
) -> Result<SampledWaveform, MeteringError> {
    synthesize_at(rms_fund, phase, harmonics, sample_rate, FUNDAMENTAL_HZ, periods)
}

pub fn synthesize_at(
    rms_fund: f64,
    phase: f64,
    harmonics: &HarmonicSpec,
    sample_rate: f64,
    fundamental: f64,
    periods: usize,
) -> Result<SampledWaveform, MeteringError> {
    harmonics.validate()?;
    if !rms_fund.is_finite() || rms_fund < 0.0 || !phase.is_finite() {
        return Err(MeteringError::InvalidParameter(format!("rms {rms_fund}, phase {phase}")));
    }
    if periods == 0 {
        return Err(MeteringError::PartialPeriod { len: 0, per_period: 0 });
    }
    let n = samples_per_period(sample_rate, fundamental)?;
    let highest = f64::from(harmonics.highest_order()) * fundamental;
    if sample_rate < MIN_OVERSAMPLING * highest {
        return Err(MeteringError::Aliasing { sample_rate, highest });
    }
    let amp = SQRT_2 * rms_fund;
    let samples = (0..n * periods)
        .map(|k| {
            // reduce the angle per period so long records stay exact
            let wt = 2.0 * PI * (k % n) as f64 / n as f64;
            let mut x = amp * (wt + phase).sin();
            for h in &harmonics.0 {
                x += amp * h.magnitude * (f64::from(h.order) * wt + h.phase).sin();
            }
            x
        })
        .collect();
    Ok(SampledWaveform { samples, sample_rate, fundamental })
}

fn check_pair(v: &SampledWaveform, i: &SampledWaveform) -> Result<usize, MeteringError> {
    if v.sample_rate != i.sample_rate || v.fundamental != i.fundamental {
        return Err(MeteringError::Mismatch("sample rate or fundamental".into()));
    }
    if v.len() != i.len() {
        return Err(MeteringError::Mismatch(format!("lengths {} and {}", v.len(), i.len())));
    }
    let n = v.samples_per_period()?;
    if n % 4 != 0 {
        return Err(MeteringError::QuarterShift(n));
    }
    if v.is_empty() || !v.len().is_multiple_of(n) {
        return Err(MeteringError::PartialPeriod { len: v.len(), per_period: n });
    }
    Ok(n)
}

/// Integrating meter over the trailing fundamental period, wrapped cyclically.
pub fn pq_integration(v: &SampledWaveform, i: &SampledWaveform) -> Result<PQReading, MeteringError> {
    let n = check_pair(v, i)?;
    let start = v.len() - n;
    let vw = &v.samples[start..];
    let iw = &i.samples[start..];
    let shift = n / 4;
    let (mut p, mut q) = (0.0, 0.0);
    for k in 0..n {
        p += vw[k] * iw[k];
        q += vw[(k + n - shift) % n] * iw[k];
    }
    Ok(PQReading { p: p / n as f64, q: q / n as f64, method: PqMethod::Integration })
}

/// Nameplate formulas `P = VI cos θ`, `Q = VI sin θ`.
pub fn pq_fundamental(v_rms: f64, i_rms: f64, theta: f64) -> PQReading {
    let s = v_rms * i_rms;
    PQReading { p: s * theta.cos(), q: s * theta.sin(), method: PqMethod::Fundamental }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Deviation {
    /// |P_fund − P_int| / |P_int|.
    Relative(f64),
    /// |P_fund − P_int| in watts, used when |P_int| < 1 W.
    AbsoluteWatts(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodComparison {
    pub integration: PQReading,
    pub fundamental: PQReading,
    pub theta: f64,
    pub v_rms: f64,
    pub i_rms: f64,
    pub deviation: Deviation,
}

pub fn compare_methods(v: &SampledWaveform, i: &SampledWaveform) -> Result<MethodComparison, MeteringError> {
    let integration = pq_integration(v, i)?;
    let theta = v.fundamental_phasor()?.arg() - i.fundamental_phasor()?.arg();
    // wrap into (-π, π]
    let theta = (theta + PI).rem_euclid(2.0 * PI) - PI;
    let (v_rms, i_rms) = (v.rms(), i.rms());
    let fundamental = pq_fundamental(v_rms, i_rms, theta);
    let diff = (fundamental.p - integration.p).abs();
    let deviation = if integration.p.abs() < 1.0 {
        Deviation::AbsoluteWatts(diff)
    } else {
        Deviation::Relative(diff / integration.p.abs())
    };
    Ok(MethodComparison { integration, fundamental, theta, v_rms, i_rms, deviation })
}

/// Reads a sample file:
///
/// ```text
/// sample_rate,10000
/// fundamental,50        (optional)
/// v,i
/// 0.0,0.0
/// ...
/// ```
pub fn read_sample_csv<R: BufRead>(reader: R) -> Result<(SampledWaveform, SampledWaveform), MeteringError> {
    let mut sample_rate = None;
    let mut fundamental = FUNDAMENTAL_HZ;
    let mut header_seen = false;
    let (mut v, mut i) = (Vec::new(), Vec::new());
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = k + 1;
        let err = |message: String| MeteringError::Parse { line: lineno, message };
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = text.split(',').map(str::trim).collect();
        if cols.len() != 2 {
            return Err(err(format!("expected 2 columns, found {}", cols.len())));
        }
        let number = |s: &str| s.parse::<f64>().map_err(|_| err(format!("not a number: {s:?}")));
        if !header_seen {
            match cols[0] {
                "sample_rate" => sample_rate = Some(number(cols[1])?),
                "fundamental" => fundamental = number(cols[1])?,
                "v" if cols[1] == "i" => {
                    if sample_rate.is_none() {
                        return Err(err("sample_rate must precede the v,i header".into()));
                    }
                    header_seen = true;
                }
                other => return Err(err(format!("unexpected header field {other:?}"))),
            }
            continue;
        }
        v.push(number(cols[0])?);
        i.push(number(cols[1])?);
    }
    let Some(sample_rate) = sample_rate else {
        return Err(MeteringError::Parse { line: 1, message: "missing sample_rate header".into() });
    };
    if !header_seen {
        return Err(MeteringError::Parse { line: 1, message: "missing v,i header".into() });
    }
    Ok((
        SampledWaveform { samples: v, sample_rate, fundamental },
        SampledWaveform { samples: i, sample_rate, fundamental },
    ))
}

pub fn write_sample_csv<W: Write>(mut w: W, v: &SampledWaveform, i: &SampledWaveform) -> io::Result<()> {
    writeln!(w, "sample_rate,{}", v.sample_rate)?;
    writeln!(w, "fundamental,{}", v.fundamental)?;
    writeln!(w, "v,i")?;
    for (a, b) in v.samples.iter().zip(&i.samples) {
        writeln!(w, "{a:e},{b:e}")?;
    }
    Ok(())
}
