//! SyntheticFlu: a two-measurement, ten-state Markov disease with
//! treatment-induced censoring.
//!
//! Per step the events happen in [`EVENT_ORDER`]: a patient in a severe state
//! may be treated (which resets both measurements to a benign state and skips
//! the transition), otherwise both measurements move; reaching state 10 is
//! death, and a patient with both measurements benign may be discharged.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Cohort, Outcome, PatientId, TimedSample, Trajectory};
use crate::error::{Error, Result};
use crate::seed::stream_rng;
use crate::supervision::coarse_grade;

pub const MIN_STATE: u8 = 1;
pub const DEATH_STATE: u8 = 10;
pub const BENIGN: std::ops::RangeInclusive<u8> = 1..=2;
pub const SEVERE: std::ops::RangeInclusive<u8> = 6..=9;
pub const DISCHARGE_PROB: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepEvent {
    Treatment,
    Transition,
    DeathCheck,
    DischargeCheck,
}

/// Within-step event order used by [`step`].
pub const EVENT_ORDER: [StepEvent; 4] = [
    StepEvent::Treatment,
    StepEvent::Transition,
    StepEvent::DeathCheck,
    StepEvent::DischargeCheck,
];

/// One-step move probabilities `(up, stay, down)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    pub up: f64,
    pub stay: f64,
    pub down: f64,
}

pub const DETERIORATING: Kernel = Kernel {
    up: 0.5,
    stay: 0.3,
    down: 0.2,
};

pub const NORMAL: Kernel = Kernel {
    up: 0.1,
    stay: 0.7,
    down: 0.2,
};

impl Kernel {
    /// Maps a uniform draw `u` in [0,1) to a move of +1, 0 or -1.
    pub fn draw(&self, u: f64) -> i8 {
        if u < self.up {
            1
        } else if u < self.up + self.stay {
            0
        } else {
            -1
        }
    }
}

/// Treatment probabilities for high temperature and high WBC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub rho_temp: f64,
    pub rho_wbc: f64,
}

impl Regime {
    pub fn new(rho_temp: f64, rho_wbc: f64) -> Result<Self> {
        let r = Self { rho_temp, rho_wbc };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("rho_temp", self.rho_temp), ("rho_wbc", self.rho_wbc)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("{name}={p} outside [0,1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measurement {
    Temp,
    Wbc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatientState {
    pub temp_state: u8,
    pub wbc_state: u8,
    pub deteriorating: Measurement,
    pub alive: bool,
    pub discharged: bool,
    pub treated_this_step: bool,
}

impl PatientState {
    pub fn admitted(deteriorating: Measurement) -> Self {
        Self {
            temp_state: MIN_STATE,
            wbc_state: MIN_STATE,
            deteriorating,
            alive: true,
            discharged: false,
            treated_this_step: false,
        }
    }

    pub fn is_terminal(&self) -> bool {
        !self.alive || self.discharged
    }

    fn kernels(&self) -> (Kernel, Kernel) {
        match self.deteriorating {
            Measurement::Temp => (DETERIORATING, NORMAL),
            Measurement::Wbc => (NORMAL, DETERIORATING),
        }
    }
}

fn apply_move(state: u8, delta: i8) -> u8 {
    (state as i8 + delta).clamp(MIN_STATE as i8, DEATH_STATE as i8) as u8
}

fn benign_state<R: Rng + ?Sized>(rng: &mut R) -> u8 {
    if rng.random::<f64>() < 0.5 {
        1
    } else {
        2
    }
}

/// Advances one living, non-discharged patient by one timestep.
pub fn step<R: Rng + ?Sized>(
    state: &PatientState,
    regime: &Regime,
    rng: &mut R,
) -> Result<PatientState> {
    if state.is_terminal() {
        return Err(Error::InvalidParameter(
            "step called on a dead or discharged patient".into(),
        ));
    }
    let mut next = *state;
    next.treated_this_step = false;

    // Temperature is checked before WBC; the first successful draw treats.
    let mut treated = false;
    if SEVERE.contains(&state.temp_state) && rng.random::<f64>() < regime.rho_temp {
        treated = true;
    }
    if !treated && SEVERE.contains(&state.wbc_state) && rng.random::<f64>() < regime.rho_wbc {
        treated = true;
    }

    if treated {
        next.temp_state = benign_state(rng);
        next.wbc_state = benign_state(rng);
        next.treated_this_step = true;
    } else {
        let (k_temp, k_wbc) = state.kernels();
        next.temp_state = apply_move(state.temp_state, k_temp.draw(rng.random()));
        next.wbc_state = apply_move(state.wbc_state, k_wbc.draw(rng.random()));
        if next.temp_state == DEATH_STATE || next.wbc_state == DEATH_STATE {
            next.alive = false;
            return Ok(next);
        }
    }

    if BENIGN.contains(&next.temp_state)
        && BENIGN.contains(&next.wbc_state)
        && rng.random::<f64>() < DISCHARGE_PROB
    {
        next.discharged = true;
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub max_steps: usize,
    /// Append the coarse grade as a third feature.
    pub append_grade: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            max_steps: 200,
            append_grade: false,
        }
    }
}

fn features(state: &PatientState, append_grade: bool) -> Vec<f64> {
    let mut f = vec![state.temp_state as f64, state.wbc_state as f64];
    if append_grade {
        // States are always in 1..=10 here.
        f.push(coarse_grade(&f).expect("valid states") as f64);
    }
    f
}

/// Simulates one patient.
///
/// The admission state is emitted at time 0 and every surviving step `k`
/// emits a sample at time `k`. The death transition emits no sample; the
/// outcome time is the step at which state 10 was reached. Treatment events
/// are recorded at the time of the state that triggered them.
pub fn simulate_patient<R: Rng + ?Sized>(
    patient_id: PatientId,
    regime: &Regime,
    config: &SimConfig,
    rng: &mut R,
) -> Result<Trajectory> {
    if config.max_steps < 1 {
        return Err(Error::InvalidParameter("max_steps must be >= 1".into()));
    }
    regime.validate()?;
    let deteriorating = if rng.random::<f64>() < 0.5 {
        Measurement::Temp
    } else {
        Measurement::Wbc
    };
    let mut state = PatientState::admitted(deteriorating);
    let mut samples = vec![TimedSample {
        patient_id: patient_id.clone(),
        index: 0,
        time: 0.0,
        features: features(&state, config.append_grade),
    }];
    let mut treatments = Vec::new();
    let mut outcome = Outcome::Censored;
    let mut outcome_time = 0.0;

    for k in 1..=config.max_steps {
        state = step(&state, regime, rng)?;
        let t = k as f64;
        if state.treated_this_step {
            treatments.push(t - 1.0);
        }
        if !state.alive {
            outcome = Outcome::Died;
            outcome_time = t;
            break;
        }
        samples.push(TimedSample {
            patient_id: patient_id.clone(),
            index: samples.len(),
            time: t,
            features: features(&state, config.append_grade),
        });
        outcome_time = t;
        if state.discharged {
            outcome = Outcome::Discharged;
            break;
        }
    }

    Ok(Trajectory::new(patient_id, samples, outcome, outcome_time)?.with_treatments(treatments))
}

pub fn patient_id(ordinal: usize) -> PatientId {
    PatientId(format!("p{ordinal:06}"))
}

/// Simulates `n` patients. Patient `i` draws from stream `i` of `seed`, so the
/// cohort depends only on `(n, regime, seed, config)`.
pub fn simulate_cohort(n: usize, regime: &Regime, seed: u64, config: &SimConfig) -> Result<Cohort> {
    if n == 0 {
        return Err(Error::InvalidParameter("cohort size must be >= 1".into()));
    }
    regime.validate()?;
    let trajectories = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            simulate_patient(patient_id(i), regime, config, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Cohort::new(trajectories)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub n: usize,
    pub died: usize,
    pub discharged: usize,
    pub censored: usize,
    pub treated: usize,
}

impl CohortSummary {
    pub fn of(cohort: &Cohort) -> Self {
        let mut s = CohortSummary {
            n: cohort.len(),
            died: 0,
            discharged: 0,
            censored: 0,
            treated: 0,
        };
        for t in cohort.trajectories() {
            match t.outcome {
                Outcome::Died => s.died += 1,
                Outcome::Discharged => s.discharged += 1,
                Outcome::Censored => s.censored += 1,
            }
            if t.was_treated() {
                s.treated += 1;
            }
        }
        s
    }

    pub fn mortality(&self) -> f64 {
        self.died as f64 / self.n as f64
    }
}
