// SPDX-License-Identifier: Apache-2.0

//! Closed-form two-stage Miller amplifier surrogate.
//!
//! Seven sizing parameters, all log-scaled:
//!
//! | name      | device                     | range        |
//! |-----------|----------------------------|--------------|
//! | `w_load`  | PMOS mirror load (M3/M4)   | 0.5-100 um   |
//! | `w_out_p` | PMOS second stage (M6)     | 0.5-100 um   |
//! | `w_in`    | NMOS input pair (M1/M2)    | 0.5-100 um   |
//! | `w_tail`  | NMOS tail source (M5)      | 0.5-100 um   |
//! | `w_out_n` | NMOS output sink (M7)      | 0.5-100 um   |
//! | `w_bias`  | NMOS bias diode (M8)       | 0.5-100 um   |
//! | `c_comp`  | Miller capacitor           | 0.1-10 pF    |
//!
//! All channels are 0.3 um. A fixed reference current `I_ref` feeds the bias
//! diode so `I5 = I_ref * w_tail / w_bias` and `I7 = I_ref * w_out_n / w_bias`.
//! With square-law devices `gm = sqrt(2 k (W/L) I_D)` and `g_ds = lambda I_D`:
//!
//! * gain (dB) = `20 log10(A1 A2)`, `A1 = gm1 / ((ln + lp) I5/2)`,
//!   `A2 = gm6 / ((ln + lp) I7)`
//! * UGBW = `gm1 / (2 pi Cc)`
//! * phase margin = `90 - atan(f_u/p2) - atan(f_u/z) - atan(f_u/p3)` with the
//!   output pole `p2 = gm6 / (2 pi (CL + Cgs6))`, right-half-plane zero
//!   `z = gm6 / (2 pi Cc)` and mirror pole `p3 = gm3 / (2 pi 2 Cgs3)`
//! * power = `VDD (I_ref + I5 + I7)`
//! * swing = tail headroom `V_icm - Vtn - Vov1 - Vov5`, `V_icm = 0.42 VDD`
//! * settling = slew time `Vstep / min(I5/Cc, I7/(Cc+CL))` plus
//!   `ln(1000)/(2 pi f_u)` inflated by `1 + 3 exp(-(PM - 30)/12)` for ringing
//!
//! Corners move `kn`/`kp` by process (FF/SS/SF/FS +-15 %) times a seeded
//! factor in `[0.97, 1.03]`, shift thresholds by process and by
//! `-2 mV/C`, scale mobility by `(T/300 K)^-1.5` and scale the supply.
//! The nominal corner is unperturbed.

use rand::Rng;

use crate::envsim::{CircuitModel, CornerId, DesignState, ParamDef, Scale};
use crate::error::{Error, Result};
use crate::goalspace::{Direction, SpecDef, SpecSchema};
use crate::rng;

const L_CH: f64 = 0.3; // um
const KN: f64 = 200e-6; // A/V^2
const KP: f64 = 80e-6;
const LAMBDA_N: f64 = 0.3;
const LAMBDA_P: f64 = 0.35;
const VTN: f64 = 0.7;
const I_REF: f64 = 20e-6;
const C_LOAD: f64 = 5e-12;
const C_OX: f64 = 5e-15; // F/um^2
const VDD: f64 = 3.3;
const V_STEP: f64 = 1.0;
const T_NOM_K: f64 = 300.15;

pub const PARAM_NAMES: [&str; 7] = ["w_load", "w_out_p", "w_in", "w_tail", "w_out_n", "w_bias", "c_comp"];
pub const METRIC_NAMES: [&str; 6] = ["gain", "pm", "ugbw", "vswing", "power", "tsettle"];

/// Device-level shifts applied at one corner.
#[derive(Clone, Debug, PartialEq)]
pub struct CornerShift {
    pub kn_scale: f64,
    pub kp_scale: f64,
    pub dvtn: f64,
    pub dvtp: f64,
    pub vdd_scale: f64,
    pub temp_c: f64,
}

impl CornerShift {
    fn identity() -> Self {
        CornerShift {
            kn_scale: 1.0,
            kp_scale: 1.0,
            dvtn: 0.0,
            dvtp: 0.0,
            vdd_scale: 1.0,
            temp_c: 27.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TwoStageAmp {
    seed: u64,
    params: Vec<ParamDef>,
    schema: SpecSchema,
}

impl TwoStageAmp {
    pub fn new(seed: u64) -> Self {
        let mut params: Vec<ParamDef> = PARAM_NAMES[..6]
            .iter()
            .map(|n| ParamDef::new(n, 0.5, 100.0, Scale::Log))
            .collect();
        params.push(ParamDef::new("c_comp", 0.1, 10.0, Scale::Log));
        let schema = SpecSchema::new(vec![
            SpecDef::new("gain", Direction::LowerBounded, "dB", 46.0, 52.0),
            SpecDef::new("pm", Direction::LowerBounded, "deg", 60.0, 60.0),
            SpecDef::new("ugbw", Direction::LowerBounded, "MHz", 1.0, 20.0),
            SpecDef::new("vswing", Direction::LowerBounded, "V", 0.2, 0.3),
            SpecDef::new("power", Direction::UpperBounded, "mW", 3.3, 33.0),
            SpecDef::new("tsettle", Direction::UpperBounded, "us", 2.0, 10.0),
        ])
        .expect("static schema is valid");
        TwoStageAmp {
            seed,
            params,
            schema,
        }
    }

    pub fn corner_shift(&self, corner: &CornerId) -> CornerShift {
        if corner.is_nominal() {
            return CornerShift::identity();
        }
        let (kn, kp, dvtn, dvtp) = match corner.process.as_str() {
            "FF" => (1.15, 1.15, -0.05, -0.05),
            "SS" => (0.85, 0.85, 0.05, 0.05),
            "SF" => (0.85, 1.15, 0.05, -0.05),
            "FS" => (1.15, 0.85, -0.05, 0.05),
            _ => (1.0, 1.0, 0.0, 0.0),
        };
        let mut r = rng::seeded(self.seed ^ corner.key());
        CornerShift {
            kn_scale: kn * r.random_range(0.97..=1.03),
            kp_scale: kp * r.random_range(0.97..=1.03),
            dvtn,
            dvtp,
            vdd_scale: corner.vdd_scale,
            temp_c: corner.temp_c,
        }
    }

    /// Metrics for physical parameters under a corner shift.
    pub fn metrics(&self, phys: &[f64], c: &CornerShift) -> Vec<f64> {
        let (w_load, w6, w1, w5, w7, w8) = (phys[0], phys[1], phys[2], phys[3], phys[4], phys[5]);
        let cc = phys[6] * 1e-12;
        let mobility = ((c.temp_c + 273.15) / T_NOM_K).powf(-1.5);
        let kn = KN * c.kn_scale * mobility;
        let kp = KP * c.kp_scale * mobility;
        let dt = c.temp_c - 27.0;
        let vtn = VTN + c.dvtn - 0.002 * dt;
        let vdd = VDD * c.vdd_scale;

        let i5 = I_REF * w5 / w8;
        let i7 = I_REF * w7 / w8;
        let gm1 = (2.0 * kn * (w1 / L_CH) * i5 / 2.0).sqrt();
        let gm6 = (2.0 * kp * (w6 / L_CH) * i7).sqrt();
        let gm3 = (2.0 * kp * (w_load / L_CH) * i5 / 2.0).sqrt();
        let a1 = gm1 / ((LAMBDA_N + LAMBDA_P) * i5 / 2.0);
        let a2 = gm6 / ((LAMBDA_N + LAMBDA_P) * i7);
        let gain_db = 20.0 * (a1 * a2).log10();

        let two_pi = 2.0 * std::f64::consts::PI;
        let ugbw = gm1 / (two_pi * cc);
        let p2 = gm6 / (two_pi * (C_LOAD + 0.67 * C_OX * w6 * L_CH));
        let zero = gm6 / (two_pi * cc);
        let p3 = gm3 / (two_pi * 2.0 * 0.67 * C_OX * w_load * L_CH);
        let pm = 90.0
            - ((ugbw / p2).atan() + (ugbw / zero).atan() + (ugbw / p3).atan()).to_degrees();

        let power_mw = vdd * (I_REF + i5 + i7) * 1e3;

        let vov1 = (2.0 * (i5 / 2.0) / (kn * w1 / L_CH)).sqrt();
        let vov5 = (2.0 * i5 / (kn * w5 / L_CH)).sqrt();
        let vswing = 0.42 * vdd - vtn - vov1 - vov5;

        let slew = (i5 / cc).min(i7 / (cc + C_LOAD));
        let ringing = 1.0 + 3.0 * (-(pm - 30.0) / 12.0).exp();
        let tsettle_us = (V_STEP / slew + (1000f64).ln() / (two_pi * ugbw) * ringing) * 1e6;

        vec![gain_db, pm, ugbw * 1e-6, vswing, power_mw, tsettle_us]
    }
}

impl CircuitModel for TwoStageAmp {
    fn params(&self) -> &[ParamDef] {
        &self.params
    }

    fn schema(&self) -> &SpecSchema {
        &self.schema
    }

    fn simulate(&self, state: &DesignState, corner: &CornerId) -> Result<Vec<f64>> {
        if state.len() != self.params.len() {
            return Err(Error::dim("design state", self.params.len(), state.len()));
        }
        let phys = state.physical(&self.params);
        Ok(self.metrics(&phys, &self.corner_shift(corner)))
    }
}
