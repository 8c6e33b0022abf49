//! Fixed-order Gauss–Legendre rules used by every integral in the crate.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;

/// Nodes per panel for composite integration.
pub const PANEL_ORDER: usize = 10;

fn rule(order: usize) -> &'static GaussLegendre {
    static LOW: OnceLock<GaussLegendre> = OnceLock::new();
    static PANEL: OnceLock<GaussLegendre> = OnceLock::new();
    static HIGH: OnceLock<GaussLegendre> = OnceLock::new();
    let make = |k: usize| GaussLegendre::new(NonZeroUsize::new(k).expect("nonzero order"));
    match order {
        4 => LOW.get_or_init(|| make(4)),
        PANEL_ORDER => PANEL.get_or_init(|| make(PANEL_ORDER)),
        20 => HIGH.get_or_init(|| make(20)),
        _ => panic!("unsupported Gauss-Legendre order {order}"),
    }
}

/// Single-panel integral of `f` over `[a, b]` with the panel rule.
pub fn panel<F: FnMut(f64) -> f64>(a: f64, b: f64, f: F) -> f64 {
    if b <= a {
        return 0.0;
    }
    rule(PANEL_ORDER).integrate(a, b, f)
}

/// Composite rule: `panels` equal panels of `order` nodes each (order 4, 10 or 20).
pub fn composite<F: FnMut(f64) -> f64>(
    a: f64,
    b: f64,
    panels: usize,
    order: usize,
    mut f: F,
) -> f64 {
    if b <= a || panels == 0 {
        return 0.0;
    }
    let r = rule(order);
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|k| {
            let lo = a + k as f64 * h;
            let hi = if k + 1 == panels { b } else { lo + h };
            r.integrate(lo, hi, &mut f)
        })
        .sum()
}

/// Composite rule over the ordered breakpoints `knots`, one panel per segment.
pub fn over_segments<F: FnMut(f64) -> f64>(knots: &[f64], order: usize, mut f: F) -> f64 {
    let r = rule(order);
    knots
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| r.integrate(w[0], w[1], &mut f))
        .sum()
}

/// Rule on breakpoints refined geometrically toward both ends of `[a, b]`,
/// for integrands with algebraic endpoint singularities.
pub fn graded<F: FnMut(f64) -> f64>(a: f64, b: f64, order: usize, f: F) -> f64 {
    if b <= a {
        return 0.0;
    }
    const LEVELS: i32 = 40;
    let w = b - a;
    let mut knots = vec![a];
    knots.extend((1..=LEVELS).rev().map(|k| a + w * 0.5f64.powi(k)));
    knots.extend((2..=LEVELS).map(|k| b - w * 0.5f64.powi(k)));
    knots.push(b);
    over_segments(&knots, order, f)
}

/// Nodes and weights of a composite order-20 rule on `[a, b]`: `panels` equal
/// panels, with the two end panels refined geometrically so that algebraic
/// endpoint singularities are resolved.
pub fn refined_nodes(a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
    if b <= a || panels == 0 {
        return Vec::new();
    }
    const LEVELS: i32 = 50;
    let h = (b - a) / panels as f64;
    let mut knots = vec![a];
    knots.extend((1..=LEVELS).rev().map(|k| a + h * 0.5f64.powi(k)));
    knots.extend((1..panels).map(|k| a + k as f64 * h));
    knots.extend((1..=LEVELS).map(|k| b - h * 0.5f64.powi(k)));
    knots.push(b);
    let r = rule(20);
    let mut out = Vec::with_capacity((knots.len() - 1) * 20);
    for w in knots.windows(2).filter(|w| w[1] > w[0]) {
        let (mid, half) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
        out.extend(r.iter().map(|(x, wt)| (mid + half * x, half * wt)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panel_rule_is_exact_for_low_degree_polynomials() {
        let v = panel(0.0, 2.0, |x| x.powi(7) - 3.0 * x * x);
        assert!((v - (2f64.powi(8) / 8.0 - 8.0)).abs() < 1e-12);
    }

    #[test]
    fn composite_handles_empty_range() {
        assert_eq!(composite(1.0, 1.0, 8, 10, |x| x), 0.0);
        assert_eq!(composite(1.0, 0.5, 8, 10, |x| x), 0.0);
    }

    #[test]
    fn graded_rule_handles_endpoint_singularity() {
        let v = graded(0.0, 1.0, 20, |x| x.powf(-0.3) + (1.0 - x).sqrt());
        assert!((v - (1.0 / 0.7 + 2.0 / 3.0)).abs() < 1e-10, "{v}");
    }

    #[test]
    fn refined_nodes_integrate_smooth_and_singular() {
        let nodes = refined_nodes(0.0, 1.0, 16);
        let smooth: f64 = nodes.iter().map(|(x, w)| w * (3.0 * x).exp()).sum();
        assert!((smooth - ((3f64).exp() - 1.0) / 3.0).abs() < 1e-13);
        let singular: f64 = nodes.iter().map(|(x, w)| w * x.powf(-0.5)).sum();
        assert!((singular - 2.0).abs() < 1e-9, "{singular}");
    }

    #[test]
    fn composite_converges_on_smooth_integrand() {
        let v = composite(0.0, std::f64::consts::PI, 16, 20, f64::sin);
        assert!((v - 2.0).abs() < 1e-13);
    }
}
