//! Text feature dump: a header line `LFBE<width> <num_frames>` followed by one
//! whitespace-separated line of `width` decimals per frame. Values are written
//! with the shortest representation that parses back to the same `f32`.

use std::fmt::Write as _;

use crate::error::FormatError;
use crate::frontend::features::FeatureFrame;

pub fn write_feature_dump(frames: &[FeatureFrame], width: usize) -> String {
    let mut out = format!("LFBE{width} {}\n", frames.len());
    for f in frames {
        assert_eq!(f.0.len(), width, "frame width");
        for (i, v) in f.0.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            write!(out, "{v}").expect("write to string");
        }
        out.push('\n');
    }
    out
}

/// Parses a dump, returning the frames and their width.
pub fn read_feature_dump(text: &str) -> Result<(Vec<FeatureFrame>, usize), FormatError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| FormatError::new(1, "empty feature dump"))?;
    let mut parts = header.split_whitespace();
    let width = parts
        .next()
        .and_then(|tag| tag.strip_prefix("LFBE"))
        .and_then(|w| w.parse::<usize>().ok())
        .filter(|&w| w > 0)
        .ok_or_else(|| FormatError::new(1, "header must start with LFBE<width>"))?;
    let count: usize = parts
        .next()
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| FormatError::new(1, "header is missing the frame count"))?;
    let mut frames = Vec::with_capacity(count);
    for (idx, line) in lines {
        let values: Vec<f32> = line
            .split_whitespace()
            .map(|v| v.parse::<f32>().map_err(|_| FormatError::new(idx + 1, format!("bad number `{v}`"))))
            .collect::<Result<_, _>>()?;
        if values.len() != width {
            return Err(FormatError::new(idx + 1, format!("expected {width} values, found {}", values.len())));
        }
        frames.push(FeatureFrame(values));
    }
    if frames.len() != count {
        return Err(FormatError::new(1, format!("header announces {count} frames, found {}", frames.len())));
    }
    Ok((frames, width))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn dump_round_trips_exactly(values in proptest::collection::vec(-1e6f32..1e6, 12)) {
            let frames: Vec<FeatureFrame> = values.chunks(4).map(|c| FeatureFrame(c.to_vec())).collect();
            let text = write_feature_dump(&frames, 4);
            let (back, width) = read_feature_dump(&text).unwrap();
            prop_assert_eq!(width, 4);
            prop_assert_eq!(back, frames);
        }
    }

    #[test]
    fn header_and_count_are_checked() {
        assert!(read_feature_dump("LFBE4 2\n1 2 3 4\n").is_err());
        assert!(read_feature_dump("FEAT4 1\n1 2 3 4\n").is_err());
        assert!(read_feature_dump("LFBE4 1\n1 2 3\n").is_err());
        let (f, w) = read_feature_dump("LFBE512 0\n").unwrap();
        assert!(f.is_empty() && w == 512);
    }
}
