//! Immutable bit-strings with cheap sharing and O(1) `d`.

use std::fmt;
use std::hash::{Hash, Hasher};
use std::rc::Rc;

/// A string over {0,1}. Bits are stored as `0`/`1` bytes; dropping the first
/// bit only moves an offset.
#[derive(Clone)]
pub struct Bits {
    buf: Rc<[u8]>,
    start: usize,
}

impl Bits {
    pub fn empty() -> Bits {
        thread_local! {
            static EMPTY: Rc<[u8]> = Rc::from(Vec::new());
        }
        Bits { buf: EMPTY.with(Rc::clone), start: 0 }
    }

    /// Parses a string of `0` and `1` characters.
    pub fn parse(s: &str) -> Option<Bits> {
        let mut v = Vec::with_capacity(s.len());
        for c in s.bytes() {
            match c {
                b'0' => v.push(0),
                b'1' => v.push(1),
                _ => return None,
            }
        }
        Some(Bits::from_vec(v))
    }

    pub fn from_vec(v: Vec<u8>) -> Bits {
        debug_assert!(v.iter().all(|&b| b < 2));
        Bits { buf: Rc::from(v), start: 0 }
    }

    pub fn zeros(n: usize) -> Bits {
        Bits::from_vec(vec![0; n])
    }

    pub fn len(&self) -> usize {
        self.buf.len() - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.buf[self.start..]
    }

    pub fn first(&self) -> Option<u8> {
        self.as_slice().first().copied()
    }

    /// `d`: drop the first bit (ε stays ε).
    pub fn tail(&self) -> Bits {
        if self.is_empty() {
            self.clone()
        } else {
            Bits { buf: self.buf.clone(), start: self.start + 1 }
        }
    }

    /// `c_b`: prepend bit `b`.
    pub fn cons(&self, b: u8) -> Bits {
        let s = self.as_slice();
        let mut v = Vec::with_capacity(s.len() + 1);
        v.push(b);
        v.extend_from_slice(s);
        Bits::from_vec(v)
    }

    pub fn concat(&self, other: &Bits) -> Bits {
        let mut v = self.as_slice().to_vec();
        v.extend_from_slice(other.as_slice());
        Bits::from_vec(v)
    }

    pub fn push_back(&self, b: u8) -> Bits {
        let mut v = self.as_slice().to_vec();
        v.push(b);
        Bits::from_vec(v)
    }
}

impl Default for Bits {
    fn default() -> Self {
        Bits::empty()
    }
}

impl PartialEq for Bits {
    fn eq(&self, other: &Self) -> bool {
        self.as_slice() == other.as_slice()
    }
}

impl Eq for Bits {}

impl PartialOrd for Bits {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Bits {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.as_slice().cmp(other.as_slice())
    }
}

impl Hash for Bits {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.as_slice().hash(state)
    }
}

impl fmt::Display for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in self.as_slice() {
            f.write_str(if b == 0 { "0" } else { "1" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "\"{}\"", self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cons_and_tail() {
        let b = Bits::parse("01").unwrap();
        assert_eq!(b.cons(1).to_string(), "101");
        assert_eq!(b.tail().to_string(), "1");
        assert_eq!(b.tail().tail().tail(), Bits::empty());
        assert_eq!(b.tail().cons(0), b);
    }

    #[test]
    fn rejects_other_digits() {
        assert!(Bits::parse("012").is_none());
        assert_eq!(Bits::parse("").unwrap().len(), 0);
    }
}
