//! Argument value parsers.

use num_complex::Complex64;

use crate::Failure;

/// Shape parameter from `re,im`, `a+bi`, `bi`, `i` or `rho` (`e^{i pi/3}`).
pub fn tau(s: &str) -> Result<Complex64, Failure> {
    let bad = || Failure::Usage(format!("cannot parse tau {s:?}; use `re,im` or `a+bi`"));
    let t = s.trim().replace(' ', "");
    match t.as_str() {
        "i" => return Ok(Complex64::new(0.0, 1.0)),
        "rho" => return Ok(Complex64::new(0.5, 3f64.sqrt() / 2.0)),
        _ => {}
    }
    if let Some((a, b)) = t.split_once(',') {
        return Ok(Complex64::new(a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?));
    }
    let body = t.strip_suffix('i').ok_or_else(bad)?;
    // Split at the last sign that is not part of an exponent or the leading sign.
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&k| (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
    let (re, im) = match split {
        Some(k) => (&body[..k], &body[k..]),
        None => ("0", body),
    };
    let im = match im {
        "" | "+" => "1",
        "-" => "-1",
        x => x,
    };
    Ok(Complex64::new(re.parse().map_err(|_| bad())?, im.parse().map_err(|_| bad())?))
}

/// `min:max` with `min <= max`.
pub fn range(s: &str) -> Result<(f64, f64), Failure> {
    let bad = || Failure::Usage(format!("cannot parse range {s:?}; use `min:max`"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let (a, b): (f64, f64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if !(a <= b) {
        return Err(Failure::Usage(format!("empty range {s:?}")));
    }
    Ok((a, b))
}

/// `NxM` with both positive.
pub fn steps(s: &str) -> Result<(usize, usize), Failure> {
    let bad = || Failure::Usage(format!("cannot parse steps {s:?}; use `RExIM` with positive counts"));
    let (a, b) = s.split_once('x').ok_or_else(bad)?;
    let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if a == 0 || b == 0 {
        return Err(bad());
    }
    Ok((a, b))
}

/// Comma-separated numbers or `start:stop:count` (inclusive, evenly spaced).
pub fn list(s: &str) -> Result<Vec<f64>, Failure> {
    let bad = || Failure::Usage(format!("cannot parse list {s:?}; use `a,b,c` or `start:stop:count`"));
    let parts: Vec<&str> = s.split(':').collect();
    let out: Vec<f64> = if parts.len() == 3 {
        let (a, b): (f64, f64) = (parts[0].parse().map_err(|_| bad())?, parts[1].parse().map_err(|_| bad())?);
        let n: usize = parts[2].parse().map_err(|_| bad())?;
        match n {
            0 => Vec::new(),
            1 => vec![a],
            _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
        }
    } else {
        s.split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?
    };
    if out.is_empty() || out.iter().any(|v| !v.is_finite()) {
        return Err(bad());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_forms() {
        let rho = Complex64::new(0.5, 3f64.sqrt() / 2.0);
        assert_eq!(tau("0,1").unwrap(), Complex64::new(0.0, 1.0));
        assert_eq!(tau("i").unwrap(), Complex64::new(0.0, 1.0));
        assert_eq!(tau("rho").unwrap(), rho);
        assert_eq!(tau("0.5+0.8660254037844386i").unwrap(), Complex64::new(0.5, 0.8660254037844386));
        assert_eq!(tau("-0.2-1.5i").unwrap(), Complex64::new(-0.2, -1.5));
        assert_eq!(tau("1.2i").unwrap(), Complex64::new(0.0, 1.2));
        assert_eq!(tau("1e-3+2i").unwrap(), Complex64::new(1e-3, 2.0));
        assert!(tau("banana").is_err());
        assert!(tau("1,").is_err());
    }

    #[test]
    fn lists_and_ranges() {
        assert_eq!(list("0,0.5,1").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(list("0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(list("").is_err());
        assert_eq!(range("0:1").unwrap(), (0.0, 1.0));
        assert!(range("1:0").is_err());
        assert_eq!(steps("3x4").unwrap(), (3, 4));
        assert!(steps("0x4").is_err());
    }
}
