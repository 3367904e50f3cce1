use super::CurvePoint;

/// Published detection rates per monitored share, as
/// `(share, prob_etc, linucb)`. Reference values only.
pub const REFERENCE_TABLE: [(f64, f64, f64); 9] = [
    (0.1, 0.2196, 0.3202),
    (0.2, 0.3634, 0.5500),
    (0.3, 0.4769, 0.7225),
    (0.4, 0.5751, 0.8035),
    (0.5, 0.6604, 0.8496),
    (0.6, 0.7383, 0.8897),
    (0.7, 0.8112, 0.9219),
    (0.8, 0.8779, 0.9506),
    (0.9, 0.9405, 0.9792),
];

/// Gain of `linucb` over `etc` in percentage points and in percent of the
/// ETC rate. The relative gain is `None` when the ETC rate is zero.
pub fn improvement(linucb: f64, etc: f64) -> (f64, Option<f64>) {
    let pp = (linucb - etc) * 100.0;
    let pct = (etc != 0.0).then(|| (linucb - etc) / etc * 100.0);
    (pp, pct)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImprovementRow {
    pub target_share: f64,
    pub linucb: f64,
    pub prob_etc: f64,
    pub pp: f64,
    pub pct: Option<f64>,
    /// Published `(prob_etc, linucb)` at the same share, if any.
    pub reference: Option<(f64, f64)>,
}

/// Pairs LinUCB and probabilistic-ETC curve points by target share. Shares
/// missing either side, or without detection data, are skipped with a
/// warning.
pub fn improvement_table(points: &[CurvePoint]) -> Vec<ImprovementRow> {
    let find = |policy: &str, share: f64| {
        points
            .iter()
            .find(|p| p.policy == policy && p.target_share == share)
            .and_then(|p| p.mean_detection)
    };
    let mut shares: Vec<f64> = points.iter().map(|p| p.target_share).collect();
    shares.sort_by(f64::total_cmp);
    shares.dedup();
    shares
        .into_iter()
        .filter_map(|share| match (find("linucb", share), find("prob_etc", share)) {
            (Some(lin), Some(etc)) => {
                let (pp, pct) = improvement(lin, etc);
                let reference = REFERENCE_TABLE
                    .iter()
                    .find(|r| (r.0 - share).abs() < 1e-9)
                    .map(|r| (r.1, r.2));
                Some(ImprovementRow {
                    target_share: share,
                    linucb: lin,
                    prob_etc: etc,
                    pp,
                    pct,
                    reference,
                })
            }
            _ => {
                log::warn!("share {share}: no matched linucb/prob_etc detection rates, column omitted");
                None
            }
        })
        .collect()
}
