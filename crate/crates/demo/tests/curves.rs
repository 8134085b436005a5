use pnorm_erm::bounds::BoundInputs;
use pnorm_erm_demo::{bound_rows, gamma_rows, loss_rows, tail_rows};

#[test]
fn loss_rows_are_interleaved_and_convex() {
    let rows = loss_rows(1.5, -2.0, 2.0, 41).unwrap();
    assert_eq!(rows.len(), 3 * 41);
    assert_eq!(rows[0], -2.0);
    assert_eq!(rows[3 * 40], 2.0);
    let loss: Vec<f64> = rows.chunks(3).map(|r| r[1]).collect();
    for w in loss.windows(3) {
        assert!(w[0] + w[2] >= 2.0 * w[1] - 1e-12);
    }
    assert!(loss_rows(1.0, 0.0, 1.0, 5).is_err());
}

#[test]
fn gamma_rows_meet_both_branches() {
    let (p, t) = (1.5, 1.0);
    let rows = gamma_rows(p, t, 3.0, 301).unwrap();
    for r in rows.chunks(4) {
        let (x, g, quad, pow) = (r[0], r[1], r[2], r[3]);
        if x <= t {
            assert!((g - quad).abs() <= 1e-12 * quad.max(1.0));
        } else {
            assert!((g - (pow - (1.0 - 0.5 * p) * t.powf(p))).abs() <= 1e-12 * pow);
        }
    }
    assert!(gamma_rows(2.5, 1.0, 1.0, 3).is_err());
}

#[test]
fn bound_rows_decrease_and_flag_threshold() {
    let inputs = BoundInputs {
        v: 5.0,
        sigma_p_sq: 1.0,
        c_p_lp: 1.0,
        c_p_l2: 1.0,
        c_star_p: 1.0,
        rho: 0.0,
    };
    let rows = bound_rows(2.0, 5, 0.1, &inputs, 10, 100_000, 50).unwrap();
    let r: Vec<&[f64]> = rows.chunks(5).collect();
    assert!(r.windows(2).all(|w| w[1][0] > w[0][0] && w[1][1] < w[0][1]));
    let last = r.last().unwrap();
    assert_eq!(last[0], 100_000.0);
    assert!((last[1] - 16.0 * 5.0 / (100_000.0 * 0.1)).abs() < 1e-15);
    assert_eq!(last[4], 1.0);
    assert_eq!(r[0][4], 0.0);
}

#[test]
fn tail_rows_match_closed_form() {
    let rows = tail_rows(2, 0.5, 10).unwrap();
    assert_eq!(rows.len(), 2 * 9);
    assert_eq!(rows[rows.len() - 2], 10.0);
    assert!((rows[rows.len() - 1] - 0.01953125).abs() < 1e-15);
}
