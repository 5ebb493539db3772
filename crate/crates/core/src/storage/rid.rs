//! Row identifiers: Crockford base-32 encoding of a catalog-global counter.
//! Values from 1024 upward are zero-padded to five digits and grouped in
//! fours from the right (`0-0100`, `1-0000`, `1-ABCD-EFGH`).

const ALPHABET: &[u8; 32] = b"0123456789ABCDEFGHJKMNPQRSTVWXYZ";

pub fn encode_rid(n: u64) -> String {
    let mut digits = Vec::new();
    let mut v = n;
    loop {
        digits.push(ALPHABET[(v % 32) as usize]);
        v /= 32;
        if v == 0 {
            break;
        }
    }
    if n >= 1024 {
        while digits.len() < 5 {
            digits.push(b'0');
        }
    }
    let mut out = String::new();
    for (i, d) in digits.iter().enumerate().rev() {
        out.push(*d as char);
        if i > 0 && i % 4 == 0 && n >= 1024 {
            out.push('-');
        }
    }
    out
}

pub fn decode_rid(s: &str) -> Option<u64> {
    let mut n: u64 = 0;
    let mut any = false;
    for c in s.chars() {
        if c == '-' {
            continue;
        }
        let c = match c.to_ascii_uppercase() {
            'O' => '0',
            'I' | 'L' => '1',
            other => other,
        };
        let d = ALPHABET.iter().position(|&a| a as char == c)? as u64;
        n = n.checked_mul(32)?.checked_add(d)?;
        any = true;
    }
    any.then_some(n)
}

/// Syntax check only: the value decodes and re-encodes to itself.
pub fn is_valid_rid(s: &str) -> bool {
    decode_rid(s).is_some_and(|n| encode_rid(n) == s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_values() {
        assert_eq!(encode_rid(0), "0");
        assert_eq!(encode_rid(31), "Z");
        assert_eq!(encode_rid(1023), "ZZ");
        assert_eq!(encode_rid(1024), "0-0100");
        assert_eq!(encode_rid(32u64.pow(4)), "1-0000");
        assert_eq!(encode_rid(32u64.pow(8)), "1-0000-0000");
        assert_eq!(decode_rid("1-0000"), Some(32u64.pow(4)));
        assert!(!is_valid_rid("hello!"));
        assert!(is_valid_rid("0-0100"));
    }

    proptest! {
        #[test]
        fn round_trip(n in 0u64..u64::MAX / 64) {
            let s = encode_rid(n);
            prop_assert_eq!(decode_rid(&s), Some(n));
            prop_assert!(is_valid_rid(&s));
        }
    }
}
