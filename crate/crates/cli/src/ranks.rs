use tnet_core::{Error, Result};

/// Parses `full` or a comma-separated list of positive integers.
pub fn parse_ranks(text: &str, full: &[usize]) -> Result<Vec<usize>> {
    let text = text.trim();
    if text.eq_ignore_ascii_case("full") {
        return Ok(full.to_vec());
    }
    text.split(',')
        .map(|tok| {
            let tok = tok.trim();
            match tok.parse::<usize>() {
                Ok(0) => Err(Error::Rank(format!("rank 0 in {text:?}"))),
                Ok(r) => Ok(r),
                Err(_) => Err(Error::Rank(format!("malformed rank {tok:?} in {text:?}"))),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar() {
        assert_eq!(parse_ranks("2, 3,4", &[]).unwrap(), vec![2, 3, 4]);
        assert_eq!(parse_ranks("FULL", &[5, 6]).unwrap(), vec![5, 6]);
        for bad in ["", "1,,2", "a,b", "1,-2", "0,1", "1.5"] {
            assert!(parse_ranks(bad, &[]).is_err(), "{bad:?}");
        }
    }
}
