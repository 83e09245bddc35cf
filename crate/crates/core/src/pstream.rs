//! Profile stream files (`.pstream`).
//!
//! A stream is a sequence of records, each `<len>\n<body>\n` where `len` is the
//! decimal byte length of `body`. The body holds one canonical value per line:
//!
//! ```text
//! seq 17
//! bytes 42
//! receiving NamingTable#0{...}
//! param 6
//! param 1
//! result "LiberationSans"
//! ```
//!
//! Canonical text never contains a newline, so the body is unambiguous even
//! without the length prefix; the prefix lets readers detect truncation.

use crate::model::{MethodId, ObjectProfile, SerializedValue};

pub const EXTENSION: &str = "pstream";

pub fn encode_record(p: &ObjectProfile) -> String {
    let mut body = format!("seq {}\nbytes {}\nreceiving {}\n", p.seq, p.byte_count(), p.receiving.as_str());
    for param in &p.parameters {
        body.push_str("param ");
        body.push_str(param.as_str());
        body.push('\n');
    }
    body.push_str("result ");
    body.push_str(p.result.as_str());
    format!("{}\n{body}\n", body.len())
}

/// Result of reading one stream: the records that parsed, plus the number of
/// records that did not.
#[derive(Debug, Default)]
pub struct StreamContents {
    pub profiles: Vec<ObjectProfile>,
    pub corrupt: usize,
}

pub fn decode_stream(method: &MethodId, data: &[u8]) -> StreamContents {
    let mut out = StreamContents::default();
    let mut pos = 0;
    while pos < data.len() {
        let Some(nl) = data[pos..].iter().position(|&b| b == b'\n') else {
            out.corrupt += 1;
            break;
        };
        let len = std::str::from_utf8(&data[pos..pos + nl]).ok().and_then(|s| s.parse::<usize>().ok());
        let start = pos + nl + 1;
        let Some(len) = len.filter(|len| start + len < data.len() && data[start + len] == b'\n') else {
            // The framing itself is damaged; nothing after this point can be trusted.
            out.corrupt += 1;
            break;
        };
        match std::str::from_utf8(&data[start..start + len]).ok().and_then(|body| parse_body(method, body)) {
            Some(p) => out.profiles.push(p),
            None => out.corrupt += 1,
        }
        pos = start + len + 1;
    }
    out
}

fn parse_body(method: &MethodId, body: &str) -> Option<ObjectProfile> {
    let mut lines = body.split('\n');
    let seq = lines.next()?.strip_prefix("seq ")?.parse().ok()?;
    let bytes: usize = lines.next()?.strip_prefix("bytes ")?.parse().ok()?;
    let receiving = SerializedValue::from_canonical(lines.next()?.strip_prefix("receiving ")?);
    let mut parameters = Vec::new();
    let mut result = None;
    for line in lines {
        if result.is_some() {
            return None;
        }
        if let Some(p) = line.strip_prefix("param ") {
            parameters.push(SerializedValue::from_canonical(p));
        } else {
            result = Some(SerializedValue::from_canonical(line.strip_prefix("result ")?));
        }
    }
    let p = ObjectProfile { method: method.clone(), seq, receiving, parameters, result: result? };
    (p.parameters.len() == method.arity && p.byte_count() == bytes).then_some(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(seq: u64, params: &[&str]) -> ObjectProfile {
        ObjectProfile {
            method: MethodId::new("m", "C", "f", params.len()),
            seq,
            receiving: SerializedValue::from_canonical("C#0{}"),
            parameters: params.iter().map(|p| SerializedValue::from_canonical(*p)).collect(),
            result: SerializedValue::from_canonical("\"a\\nb\""),
        }
    }

    #[test]
    fn records_round_trip() {
        let ps = [profile(1, &["1", "2"]), profile(5, &["3", "list#0[]"])];
        let data: String = ps.iter().map(encode_record).collect();
        let back = decode_stream(&ps[0].method, data.as_bytes());
        assert_eq!(back.corrupt, 0);
        assert_eq!(back.profiles, ps);
    }

    #[test]
    fn truncated_tail_counts_one_corrupt_record() {
        let ps = [profile(1, &["1"]), profile(2, &["2"]), profile(3, &["3"])];
        let data: String = ps.iter().map(encode_record).collect();
        for cut in 1..encode_record(&ps[2]).len() {
            let back = decode_stream(&ps[0].method, &data.as_bytes()[..data.len() - cut]);
            assert_eq!(back.profiles, ps[..2], "cut {cut}");
            assert_eq!(back.corrupt, 1);
        }
    }

    #[test]
    fn wrong_arity_is_corrupt() {
        let data = encode_record(&profile(1, &["1", "2"]));
        let back = decode_stream(&MethodId::new("m", "C", "f", 3), data.as_bytes());
        assert_eq!((back.profiles.len(), back.corrupt), (0, 1));
    }
}
