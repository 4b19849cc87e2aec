use std::collections::HashMap;
use std::io::{BufRead, Write};

use super::{HamError, Integrals, Result};

fn canonical_quad(i: usize, j: usize, k: usize, l: usize) -> [usize; 4] {
    let (a, b) = if i >= j { (i, j) } else { (j, i) };
    let (c, d) = if k >= l { (k, l) } else { (l, k) };
    if (a, b) >= (c, d) {
        [a, b, c, d]
    } else {
        [c, d, a, b]
    }
}

struct Header {
    norb: usize,
    nelec: usize,
    ms2: i32,
}

fn parse_header(text: &str) -> Result<Header> {
    let body = text.trim();
    let body = body
        .strip_prefix("&FCI")
        .or_else(|| body.strip_prefix("&fci"))
        .ok_or_else(|| HamError::MalformedHeader("missing &FCI".into()))?;
    let mut map: HashMap<String, Vec<String>> = HashMap::new();
    let mut current: Option<String> = None;
    for tok in body.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
        if let Some((k, v)) = tok.split_once('=') {
            let key = k.trim().to_ascii_uppercase();
            let e = map.entry(key.clone()).or_default();
            if !v.is_empty() {
                e.push(v.to_string());
            }
            current = Some(key);
        } else if let Some(k) = &current {
            map.get_mut(k).unwrap().push(tok.to_string());
        } else {
            return Err(HamError::MalformedHeader(format!("unexpected token {tok}")));
        }
    }
    let get = |k: &str| -> Result<Option<i64>> {
        match map.get(k) {
            None => Ok(None),
            Some(v) if v.len() == 1 => v[0]
                .parse::<i64>()
                .map(Some)
                .map_err(|_| HamError::MalformedHeader(format!("{k}={}", v[0]))),
            Some(v) => Err(HamError::MalformedHeader(format!("{k} has {} values", v.len()))),
        }
    };
    let norb = get("NORB")?.ok_or_else(|| HamError::MalformedHeader("NORB missing".into()))?;
    let nelec = get("NELEC")?.ok_or_else(|| HamError::MalformedHeader("NELEC missing".into()))?;
    let ms2 = get("MS2")?.unwrap_or(0);
    if norb <= 0 || nelec < 0 {
        return Err(HamError::MalformedHeader(format!("NORB={norb}, NELEC={nelec}")));
    }
    if let Some(sym) = map.get("ORBSYM") {
        if sym.len() != norb as usize {
            return Err(HamError::MalformedHeader(format!(
                "ORBSYM has {} entries for NORB={norb}",
                sym.len()
            )));
        }
    }
    Ok(Header { norb: norb as usize, nelec: nelec as usize, ms2: ms2 as i32 })
}

/// Reads a Molpro-style FCIDUMP. Point-group labels are accepted and ignored.
pub fn parse_fcidump<R: BufRead>(reader: R) -> Result<Integrals> {
    let mut header = String::new();
    let mut lines = reader.lines().enumerate();
    let mut in_header = false;
    let mut closed = false;
    for (_, line) in lines.by_ref() {
        let line = line.map_err(|e| HamError::Io(e.to_string()))?;
        let t = line.trim();
        if !in_header {
            if t.is_empty() {
                continue;
            }
            if !t.to_ascii_uppercase().starts_with("&FCI") {
                return Err(HamError::MalformedHeader(format!("expected &FCI, found {t}")));
            }
            in_header = true;
        }
        let upper = t.to_ascii_uppercase();
        if let Some(pos) = upper.find("&END") {
            header.push_str(&t[..pos]);
            closed = true;
            break;
        }
        if t == "/" || t.ends_with('/') {
            header.push_str(t.trim_end_matches('/'));
            closed = true;
            break;
        }
        header.push_str(t);
        header.push(' ');
    }
    if !closed {
        return Err(HamError::MalformedHeader("header not terminated".into()));
    }
    let hdr = parse_header(&header)?;
    let k = hdr.norb;
    let mut ints = Integrals::zeros(k, hdr.nelec, hdr.ms2);
    let mut seen_v: HashMap<[usize; 4], f64> = HashMap::new();
    let mut seen_h: HashMap<(usize, usize), f64> = HashMap::new();
    let mut seen_core: Option<f64> = None;
    for (no, line) in lines {
        let line = line.map_err(|e| HamError::Io(e.to_string()))?;
        let lno = no + 1;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let fields: Vec<&str> = t.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(HamError::MalformedLine { line: lno, msg: format!("{} fields", fields.len()) });
        }
        let val: f64 = fields[0]
            .replace(['D', 'd'], "E")
            .parse()
            .map_err(|_| HamError::MalformedLine { line: lno, msg: format!("value {}", fields[0]) })?;
        let mut ix = [0usize; 4];
        for (n, f) in fields[1..].iter().enumerate() {
            let x: usize = f.parse().map_err(|_| HamError::MalformedLine {
                line: lno,
                msg: format!("index {f}"),
            })?;
            if x > k {
                return Err(HamError::IndexOutOfRange { line: lno, index: x });
            }
            ix[n] = x;
        }
        let [i, j, a, b] = ix;
        if i == 0 && j == 0 && a == 0 && b == 0 {
            if let Some(old) = seen_core {
                if (old - val).abs() > 1e-10 {
                    return Err(HamError::DuplicateConflict { indices: ix, first: old, second: val });
                }
            }
            seen_core = Some(val);
            ints.e_core = val;
        } else if a == 0 && b == 0 {
            if j == 0 {
                // orbital energy line
                continue;
            }
            let key = if i >= j { (i, j) } else { (j, i) };
            if let Some(&old) = seen_h.get(&key) {
                if (old - val).abs() > 1e-10 {
                    return Err(HamError::DuplicateConflict { indices: ix, first: old, second: val });
                }
            }
            seen_h.insert(key, val);
            ints.set_h(i - 1, j - 1, val);
        } else {
            if i == 0 || j == 0 || a == 0 || b == 0 {
                return Err(HamError::MalformedLine { line: lno, msg: "partial zero indices".into() });
            }
            let key = canonical_quad(i, j, a, b);
            if let Some(&old) = seen_v.get(&key) {
                if (old - val).abs() > 1e-10 {
                    return Err(HamError::DuplicateConflict { indices: key, first: old, second: val });
                }
            }
            seen_v.insert(key, val);
            ints.set_v(i - 1, j - 1, a - 1, b - 1, val);
        }
    }
    ints.validate()?;
    Ok(ints)
}

/// `x` with 17 significant digits and a signed two-digit exponent, e.g. `-1.2500000000000000E+00`.
pub fn format_fortran_e(x: f64) -> String {
    let s = format!("{x:.16E}");
    let (mant, exp) = s.split_once('E').expect("exponent");
    let e: i32 = exp.parse().expect("exponent value");
    let sign = if e < 0 { '-' } else { '+' };
    format!("{mant}E{sign}{:02}", e.abs())
}

pub fn write_fcidump<W: Write>(ints: &Integrals, w: &mut W) -> Result<()> {
    let io = |e: std::io::Error| HamError::Io(e.to_string());
    let k = ints.n_orb;
    writeln!(w, "&FCI NORB={},NELEC={},MS2={},", k, ints.n_elec, ints.two_sz).map_err(io)?;
    let sym = vec!["1"; k].join(",");
    writeln!(w, "  ORBSYM={sym},").map_err(io)?;
    writeln!(w, "  ISYM=1,").map_err(io)?;
    writeln!(w, "&END").map_err(io)?;
    for i in 0..k {
        for j in 0..=i {
            for a in 0..k {
                for b in 0..=a {
                    if (a, b) > (i, j) {
                        continue;
                    }
                    let x = ints.v(i, j, a, b);
                    if x != 0.0 {
                        writeln!(w, "{:>24} {:>4} {:>4} {:>4} {:>4}", format_fortran_e(x), i + 1, j + 1, a + 1, b + 1)
                            .map_err(io)?;
                    }
                }
            }
        }
    }
    for i in 0..k {
        for j in 0..=i {
            let x = ints.h(i, j);
            if x != 0.0 {
                writeln!(w, "{:>24} {:>4} {:>4} {:>4} {:>4}", format_fortran_e(x), i + 1, j + 1, 0, 0)
                    .map_err(io)?;
            }
        }
    }
    writeln!(w, "{:>24} {:>4} {:>4} {:>4} {:>4}", format_fortran_e(ints.e_core), 0, 0, 0, 0)
        .map_err(io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamio::build_hubbard;
    use proptest::prelude::*;

    #[test]
    fn header_only_h() {
        let text = "&FCI NORB=2,NELEC=2,MS2=0,\n ORBSYM=1,1,\n ISYM=1,\n&END\n -1.0 1 2 0 0\n 0.5 1 1 0 0\n";
        let ints = parse_fcidump(text.as_bytes()).unwrap();
        assert_eq!(ints.h(1, 0), -1.0);
        assert_eq!(ints.h(0, 0), 0.5);
        assert_eq!(ints.max_abs_v(), 0.0);
    }

    #[test]
    fn slash_terminator_and_fortran_exponent() {
        let text = "&FCI NORB=1, NELEC=2 /\n 2.0D+00 1 1 1 1\n 0.25 0 0 0 0\n";
        let ints = parse_fcidump(text.as_bytes()).unwrap();
        assert_eq!(ints.v(0, 0, 0, 0), 2.0);
        assert_eq!(ints.e_core, 0.25);
    }

    #[test]
    fn hubbard_round_trip() {
        let ints = build_hubbard(2, &[1.0], 4.0).unwrap();
        let mut buf = Vec::new();
        write_fcidump(&ints, &mut buf).unwrap();
        let back = parse_fcidump(buf.as_slice()).unwrap();
        assert_eq!(back, ints);
    }

    #[test]
    fn h2_like_symmetry_expansion() {
        let text = "&FCI NORB=2,NELEC=2,MS2=0 &END\n\
            0.6757 1 1 1 1\n0.6646 1 1 2 2\n0.1813 2 1 2 1\n0.6986 2 2 2 2\n\
            -1.2528 1 1 0 0\n-0.4759 2 2 0 0\n0.7137 0 0 0 0\n";
        let ints = parse_fcidump(text.as_bytes()).unwrap();
        // independent check: every permutation of each stored quadruple
        for (val, [i, j, k, l]) in [
            (0.6757, [0, 0, 0, 0]),
            (0.6646, [0, 0, 1, 1]),
            (0.1813, [1, 0, 1, 0]),
            (0.6986, [1, 1, 1, 1]),
        ] {
            for (a, b, c, d) in [
                (i, j, k, l),
                (j, i, k, l),
                (i, j, l, k),
                (j, i, l, k),
                (k, l, i, j),
                (l, k, i, j),
                (k, l, j, i),
                (l, k, j, i),
            ] {
                assert_eq!(ints.v(a, b, c, d), val);
            }
        }
        assert_eq!(ints.v(0, 1, 1, 1), 0.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            parse_fcidump("NORB=2\n".as_bytes()),
            Err(HamError::MalformedHeader(_))
        ));
        assert!(matches!(
            parse_fcidump("&FCI NELEC=2 &END\n".as_bytes()),
            Err(HamError::MalformedHeader(_))
        ));
        assert!(matches!(
            parse_fcidump("&FCI NORB=1,NELEC=2 &END\n1.0 2 1 0 0\n".as_bytes()),
            Err(HamError::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            parse_fcidump("&FCI NORB=2,NELEC=2 &END\n1.0 1 2 1 1\n1.5 2 1 1 1\n".as_bytes()),
            Err(HamError::DuplicateConflict { .. })
        ));
        // identical duplicates are fine
        assert!(parse_fcidump("&FCI NORB=2,NELEC=2 &END\n1.0 1 2 1 1\n1.0 1 1 2 1\n".as_bytes()).is_ok());
    }

    #[test]
    fn fortran_format() {
        assert_eq!(format_fortran_e(-1.25), "-1.2500000000000000E+00");
        assert_eq!(format_fortran_e(0.0009765625), "9.7656250000000000E-04");
        assert_eq!(format_fortran_e(0.0), "0.0000000000000000E+00");
    }

    proptest! {
        #[test]
        fn write_parse_identity(vals in proptest::collection::vec(-10.0f64..10.0, 12), core in -5.0f64..5.0) {
            let mut ints = Integrals::zeros(3, 2, 0);
            ints.set_h(0, 0, vals[0]);
            ints.set_h(0, 1, vals[1]);
            ints.set_h(1, 2, vals[2]);
            ints.set_h(2, 2, vals[3]);
            ints.set_v(0, 0, 0, 0, vals[4]);
            ints.set_v(1, 0, 2, 1, vals[5]);
            ints.set_v(2, 2, 1, 1, vals[6]);
            ints.set_v(2, 1, 0, 0, vals[7]);
            ints.set_v(1, 1, 1, 1, vals[8] * 1e-7);
            ints.set_v(2, 0, 2, 0, vals[9]);
            ints.set_v(2, 1, 2, 0, vals[10]);
            ints.set_v(2, 2, 2, 2, vals[11]);
            ints.e_core = core;
            let mut buf = Vec::new();
            write_fcidump(&ints, &mut buf).unwrap();
            let back = parse_fcidump(buf.as_slice()).unwrap();
            prop_assert_eq!(back, ints);
        }
    }
}
