//! Exact link costs.
//!
//! Weights and path depths are rationals so that threshold comparisons such as
//! `depth == thresh - weight` are exact.

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};

pub type Cost = Ratio<i64>;

pub fn int(v: i64) -> Cost {
    Cost::from_integer(v)
}

/// Parses `3`, `1.25` or `3/2`. Returns `None` for anything else, including a
/// zero denominator.
pub fn parse_cost(text: &str) -> Option<Cost> {
    if let Some((num, den)) = text.split_once('/') {
        let num: i64 = num.parse().ok()?;
        let den: i64 = den.parse().ok()?;
        if den == 0 {
            return None;
        }
        return Some(Cost::new(num, den));
    }
    if let Some((whole, frac)) = text.split_once('.') {
        if frac.is_empty() || frac.len() > 12 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let negative = whole.starts_with('-');
        let whole: i64 = if whole.is_empty() || whole == "-" {
            0
        } else {
            whole.parse().ok()?
        };
        let den = 10i64.checked_pow(frac.len() as u32)?;
        let frac: i64 = frac.parse().ok()?;
        let mut num = whole.checked_mul(den)?;
        num = if negative { num.checked_sub(frac)? } else { num.checked_add(frac)? };
        return Some(Cost::new(num, den));
    }
    text.parse::<i64>().ok().map(Cost::from_integer)
}

pub fn is_positive(c: &Cost) -> bool {
    !c.is_zero() && *c > Cost::zero()
}

pub fn to_f64(c: &Cost) -> f64 {
    c.to_f64().unwrap_or(f64::NAN)
}
