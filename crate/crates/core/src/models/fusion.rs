use super::Severity;

/// Two-of-three majority over (nailbed, conjunctiva, tongue); when all three
/// disagree the conjunctiva decides.
pub fn fuse_majority(nail: Severity, conj: Severity, tongue: Severity) -> Severity {
    if nail == tongue {
        nail
    } else {
        conj
    }
}

/// Majority over whichever regions produced a label. Missing regions take the
/// conjunctiva's label. Without a conjunctiva label, two disagreeing regions
/// resolve to the more severe class.
pub fn fuse_available(nail: Option<Severity>, conj: Option<Severity>, tongue: Option<Severity>) -> Option<Severity> {
    match (nail, conj, tongue) {
        (_, Some(c), _) => Some(fuse_majority(nail.unwrap_or(c), c, tongue.unwrap_or(c))),
        (Some(n), None, Some(t)) => Some(n.min(t)),
        (Some(n), None, None) => Some(n),
        (None, None, Some(t)) => Some(t),
        (None, None, None) => None,
    }
}
