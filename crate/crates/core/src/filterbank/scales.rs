use crate::error::{Error, Result};

/// Strictly increasing positive integer diffusion times.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ScaleSequence(Vec<usize>);

impl ScaleSequence {
    pub fn new(t: Vec<usize>) -> Result<Self> {
        if t.is_empty() {
            return Err(Error::InvalidScales("at least one scale is required".into()));
        }
        if t[0] < 1 {
            return Err(Error::InvalidScales("scales must be positive".into()));
        }
        if let Some(w) = t.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidScales(format!(
                "scales must increase strictly, found {} then {}",
                w[0], w[1]
            )));
        }
        Ok(Self(t))
    }

    /// Number of scales `J`, which is also the number of wavelets in a bank.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn first(&self) -> usize {
        self.0[0]
    }

    pub fn last(&self) -> usize {
        self.0[self.0.len() - 1]
    }
}

/// `(2^0, 2^1, …, 2^j)`, rejected when `2^j` exceeds `max_step`.
pub fn dyadic_scales(j: u32, max_step: usize) -> Result<ScaleSequence> {
    if j < 1 {
        return Err(Error::InvalidScales("dyadic ladder needs J >= 1".into()));
    }
    let top = 1usize
        .checked_shl(j)
        .filter(|&v| v <= max_step && j < usize::BITS)
        .ok_or(Error::Overflow {
            exponent: j,
            max_step,
        })?;
    debug_assert!(top <= max_step);
    ScaleSequence::new((0..=j).map(|k| 1usize << k).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dyadic_examples() {
        assert_eq!(dyadic_scales(4, 16).unwrap().as_slice(), &[1, 2, 4, 8, 16]);
        assert_eq!(dyadic_scales(1, 16).unwrap().as_slice(), &[1, 2]);
        assert!(matches!(
            dyadic_scales(5, 16),
            Err(Error::Overflow {
                exponent: 5,
                max_step: 16
            })
        ));
        assert!(dyadic_scales(0, 16).is_err());
        assert!(dyadic_scales(70, usize::MAX).is_err());
    }

    #[test]
    fn validation() {
        assert!(ScaleSequence::new(vec![]).is_err());
        assert!(ScaleSequence::new(vec![0, 1]).is_err());
        assert!(ScaleSequence::new(vec![2, 2]).is_err());
        assert!(ScaleSequence::new(vec![3, 1]).is_err());
        let s = ScaleSequence::new(vec![1, 3, 7]).unwrap();
        assert_eq!((s.len(), s.first(), s.last()), (3, 1, 7));
    }
}
