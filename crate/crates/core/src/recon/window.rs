use crate::error::{Error, Result};

/// Cyclic window `[(n - k) mod N, ..., n, ..., (n + k) mod N]` around frame `n`.
pub fn neighbor_window(n: usize, k_half: usize, n_frames: usize) -> Result<Vec<usize>> {
    let k = 2 * k_half + 1;
    if k > n_frames {
        return Err(Error::InvalidParameter(format!(
            "window of K = {k} frames exceeds sequence length {n_frames}"
        )));
    }
    if n >= n_frames {
        return Err(Error::InvalidParameter(format!(
            "frame {n} out of range for {n_frames} frames"
        )));
    }
    Ok((0..k)
        .map(|j| (n + n_frames * (k_half + 1) + j - k_half) % n_frames)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wraps_cyclically() {
        assert_eq!(neighbor_window(0, 1, 25).unwrap(), vec![24, 0, 1]);
        assert_eq!(neighbor_window(24, 2, 25).unwrap(), vec![22, 23, 24, 0, 1]);
        assert_eq!(neighbor_window(7, 0, 25).unwrap(), vec![7]);
        assert_eq!(neighbor_window(2, 2, 5).unwrap(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn rejects_oversized_window() {
        assert!(neighbor_window(0, 3, 6).is_err());
        assert!(neighbor_window(6, 1, 6).is_err());
    }
}
