/// Hinge value and subgradients of the pairwise margin-ranking loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginLoss {
    pub value: f64,
    pub d_pn: f64,
    pub d_pm: f64,
}

/// Margin-ranking loss for scores `p_n`, `p_m` with labels `r_n`, `r_m` (0 = better).
///
/// When `r_n >= r_m` the image `n` should score higher than `m` by at least
/// `eps`, otherwise lower. The subgradient is taken as 0 at the hinge corner.
pub fn margin_ranking_loss(p_n: f64, p_m: f64, r_n: u8, r_m: u8, eps: f64) -> MarginLoss {
    let (z, sign) = if r_n >= r_m { (p_m - p_n + eps, -1.0) } else { (p_n - p_m + eps, 1.0) };
    if z > 0.0 {
        MarginLoss {
            value: z,
            d_pn: sign,
            d_pm: -sign,
        }
    } else {
        MarginLoss {
            value: 0.0,
            d_pn: 0.0,
            d_pm: 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn worked_examples() {
        assert_eq!(margin_ranking_loss(2.0, 1.0, 1, 0, 0.5).value, 0.0);
        assert_eq!(margin_ranking_loss(1.0, 1.0, 1, 0, 0.5).value, 0.5);
        let l = margin_ranking_loss(1.2, 1.0, 0, 1, 0.5);
        assert!((l.value - 0.7).abs() < 1e-15);
        assert_eq!((l.d_pn, l.d_pm), (1.0, -1.0));
    }

    #[test]
    fn swap_symmetry_on_distinct_labels() {
        let mut rng = SeededRng::new(10);
        for _ in 0..1000 {
            let (p, q) = (rng.normal() * 2.0, rng.normal() * 2.0);
            let (r1, r2) = if rng.uniform() < 0.5 { (0, 1) } else { (1, 0) };
            let eps = rng.uniform();
            let a = margin_ranking_loss(p, q, r1, r2, eps);
            let b = margin_ranking_loss(q, p, r2, r1, eps);
            assert_eq!(a.value.to_bits(), b.value.to_bits());
            assert_eq!((a.d_pn, a.d_pm), (b.d_pm, b.d_pn));
        }
    }

    #[test]
    fn zero_exactly_when_separated_by_margin() {
        let mut rng = SeededRng::new(11);
        for _ in 0..1000 {
            let (better, worse) = (rng.normal(), rng.normal());
            let l = margin_ranking_loss(better, worse, 0, 1, 0.5);
            assert!(l.value >= 0.0);
            assert_eq!(l.value == 0.0, worse - better >= 0.5);
        }
    }

    #[test]
    fn subgradient_matches_finite_differences_off_the_corner() {
        let mut rng = SeededRng::new(12);
        let h = 1e-6;
        let mut skipped = 0;
        for _ in 0..1000 {
            let (p, q) = (rng.normal(), rng.normal());
            let (r1, r2) = if rng.uniform() < 0.5 { (0, 1) } else { (1, 0) };
            let z = if r1 >= r2 { q - p + 0.5 } else { p - q + 0.5 };
            if z.abs() < 10.0 * h {
                skipped += 1;
                continue;
            }
            let l = margin_ranking_loss(p, q, r1, r2, 0.5);
            let dn = (margin_ranking_loss(p + h, q, r1, r2, 0.5).value - margin_ranking_loss(p - h, q, r1, r2, 0.5).value) / (2.0 * h);
            let dm = (margin_ranking_loss(p, q + h, r1, r2, 0.5).value - margin_ranking_loss(p, q - h, r1, r2, 0.5).value) / (2.0 * h);
            assert!((dn - l.d_pn).abs() < 1e-6 && (dm - l.d_pm).abs() < 1e-6);
        }
        assert!(skipped < 10);
    }
}
