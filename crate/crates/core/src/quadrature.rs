//! Adaptive Gauss–Kronrod (G10/K21) quadrature for pairs of integrands.
//!
//! The Fermi–Dirac integrals of order 1/2 and −1/2 share their kernel, so
//! both are integrated from the same nodes and the refinement is driven by
//! the worse of the two error estimates.

use crate::error::{Error, Result};

/// Kronrod abscissae on [-1, 1]; odd indices are the 10-point Gauss nodes.
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_208_174_868_322,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

/// Gauss weights belonging to `XGK[1], XGK[3], .., XGK[9]`.
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: [f64; 2],
    error: [f64; 2],
    depth: u32,
}

fn gk21<F: Fn(f64) -> [f64; 2]>(f: &F, a: f64, b: f64, depth: u32) -> Panel {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = [fc[0] * WGK[10], fc[1] * WGK[10]];
    let mut gauss = [0.0; 2];
    for (i, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(10).enumerate() {
        let dx = half * x;
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        for c in 0..2 {
            let sum = f1[c] + f2[c];
            kronrod[c] += w * sum;
            if i % 2 == 1 {
                gauss[c] += WG[i / 2] * sum;
            }
        }
    }
    let mut value = [0.0; 2];
    let mut error = [0.0; 2];
    for c in 0..2 {
        value[c] = kronrod[c] * half;
        error[c] = ((kronrod[c] - gauss[c]) * half).abs();
    }
    Panel {
        a,
        b,
        value,
        error,
        depth,
    }
}

/// Integrates the two components of `f` over consecutive panels delimited by
/// `breakpoints`, bisecting the panel with the largest error estimate until
/// both component errors fall below `rtol` relative to their integrals.
///
/// Fails with the achieved relative error if a panel would exceed
/// `max_depth` bisections.
pub fn integrate_pair<F: Fn(f64) -> [f64; 2]>(
    f: F,
    breakpoints: &[f64],
    rtol: f64,
    max_depth: u32,
) -> Result<[f64; 2]> {
    let mut panels: Vec<Panel> = breakpoints
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| gk21(&f, w[0], w[1], 0))
        .collect();

    loop {
        let mut value = [0.0; 2];
        let mut error = [0.0; 2];
        for p in &panels {
            for c in 0..2 {
                value[c] += p.value[c];
                error[c] += p.error[c];
            }
        }
        let rel = |c: usize| {
            if value[c] == 0.0 {
                error[c]
            } else {
                error[c] / value[c].abs()
            }
        };
        let achieved = rel(0).max(rel(1));
        if achieved <= rtol {
            return Ok(value);
        }
        // Refine the panel contributing most to the worse relative error.
        let worst = (0..panels.len())
            .max_by(|&i, &j| {
                let si = panels[i].error[0] / value[0].abs().max(f64::MIN_POSITIVE)
                    + panels[i].error[1] / value[1].abs().max(f64::MIN_POSITIVE);
                let sj = panels[j].error[0] / value[0].abs().max(f64::MIN_POSITIVE)
                    + panels[j].error[1] / value[1].abs().max(f64::MIN_POSITIVE);
                si.total_cmp(&sj)
            })
            .expect("at least one panel");
        let p = panels.swap_remove(worst);
        if p.depth >= max_depth {
            return Err(Error::Quadrature {
                achieved,
                requested: rtol,
            });
        }
        let mid = 0.5 * (p.a + p.b);
        panels.push(gk21(&f, p.a, mid, p.depth + 1));
        panels.push(gk21(&f, mid, p.b, p.depth + 1));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kronrod_weights_sum_to_two() {
        let k: f64 = 2.0 * WGK[..10].iter().sum::<f64>() + WGK[10];
        let g: f64 = 2.0 * WG.iter().sum::<f64>();
        assert!((k - 2.0).abs() < 1e-14);
        assert!((g - 2.0).abs() < 1e-14);
    }

    #[test]
    fn exact_for_high_degree_polynomials() {
        // K21 integrates degree 31 exactly, G10 degree 19.
        for deg in [0, 5, 19, 30] {
            let p = gk21(&|x: f64| [x.powi(deg), x.powi(deg)], 0.0, 1.0, 0);
            let exact = 1.0 / (deg as f64 + 1.0);
            assert!((p.value[0] - exact).abs() < 1e-15, "degree {deg}");
        }
        let p = gk21(&|x: f64| [x.powi(19), 0.0], -1.0, 1.0, 0);
        assert!(p.value[0].abs() < 1e-15);
        assert!(p.error[0] < 1e-15);
    }

    #[test]
    fn adaptive_handles_sharp_feature() {
        let v = integrate_pair(
            |x: f64| [1.0 / (1.0 + 1e4 * (x - 0.3).powi(2)), x.exp()],
            &[0.0, 1.0],
            1e-13,
            40,
        )
        .unwrap();
        let exact = ((0.7 * 100.0_f64).atan() + (0.3 * 100.0_f64).atan()) / 100.0;
        assert!((v[0] - exact).abs() < 1e-13 * exact);
        assert!((v[1] - (1.0_f64.exp() - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn depth_limit_reports_achieved_error() {
        let err = integrate_pair(|x: f64| [x.sqrt().sin() * 1e3, 1.0], &[0.0, 50.0], 1e-30, 2).unwrap_err();
        match err {
            Error::Quadrature { achieved, requested } => {
                assert!(achieved > requested);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
