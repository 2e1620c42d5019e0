//! Token counts with `k`/`M`/`B` suffixes and fixed-precision float formatting.

use std::fmt;
use std::str::FromStr;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A nonnegative number of tokens. Parses `600M`, `2.5B`, `64k`, `1e6` or
/// plain integers; suffixes are powers of ten.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct TokenCount(pub u64);

impl TokenCount {
    pub fn get(self) -> u64 {
        self.0
    }
}

impl From<u64> for TokenCount {
    fn from(v: u64) -> Self {
        TokenCount(v)
    }
}

impl fmt::Display for TokenCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Parses a token quantity as a real number, honouring the `k/M/B` suffixes.
pub fn parse_token_quantity(s: &str) -> Result<f64> {
    let t = s.trim();
    let err = || Error::config("tokens", format!("cannot parse `{s}` as a token count"));
    if t.is_empty() {
        return Err(err());
    }
    let (body, mult) = match t.as_bytes()[t.len() - 1] {
        b'k' | b'K' => (&t[..t.len() - 1], 1e3),
        b'M' => (&t[..t.len() - 1], 1e6),
        b'B' | b'G' => (&t[..t.len() - 1], 1e9),
        _ => (t, 1.0),
    };
    let v: f64 = body.trim().parse().map_err(|_| err())?;
    let v = v * mult;
    if !v.is_finite() || v < 0.0 {
        return Err(err());
    }
    Ok(v)
}

impl FromStr for TokenCount {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v = parse_token_quantity(s)?;
        if v.fract() != 0.0 || v > u64::MAX as f64 {
            return Err(Error::config(
                "tokens",
                format!("`{s}` is not a whole number of tokens"),
            ));
        }
        Ok(TokenCount(v as u64))
    }
}

impl Serialize for TokenCount {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u64(self.0)
    }
}

impl<'de> Deserialize<'de> for TokenCount {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Float(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(v) => Ok(TokenCount(v)),
            Raw::Float(v) if v >= 0.0 && v.fract() == 0.0 && v.is_finite() => {
                Ok(TokenCount(v as u64))
            }
            Raw::Float(v) => Err(de::Error::custom(format!(
                "{v} is not a whole number of tokens"
            ))),
            Raw::Text(s) => s.parse().map_err(de::Error::custom),
        }
    }
}

/// Real-valued token quantity (half-lives may be fractional).
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Default)]
pub struct TokenAmount(pub f64);

impl Serialize for TokenAmount {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.0)
    }
}

impl<'de> Deserialize<'de> for TokenAmount {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(TokenAmount(v)),
            Raw::Text(s) => parse_token_quantity(&s)
                .map(TokenAmount)
                .map_err(de::Error::custom),
        }
    }
}

impl FromStr for TokenAmount {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_token_quantity(s).map(TokenAmount)
    }
}

/// Formats `x` with 9 significant digits, trimming trailing zeros.
pub fn fmt_sig9(x: f64) -> String {
    fmt_sig(x, 9)
}

pub fn fmt_sig(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let digits = digits.max(1);
    // round first so the exponent reflects the printed mantissa
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..digits as i32).contains(&exp) {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, x))
    } else {
        format!("{}e{}", trim_zeros(mantissa.to_string()), exp)
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}
