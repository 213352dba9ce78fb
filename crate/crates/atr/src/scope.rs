//! Persistent association lists used for typing contexts and environments.

use std::rc::Rc;

use crate::syntax::Name;

/// An immutable, shareable stack of bindings. Extension is O(1); lookup
/// walks from the most recent binding.
pub struct Scope<T> {
    head: Option<Rc<Node<T>>>,
}

struct Node<T> {
    name: Name,
    value: T,
    next: Option<Rc<Node<T>>>,
}

impl<T> Clone for Scope<T> {
    fn clone(&self) -> Self {
        Scope { head: self.head.clone() }
    }
}

impl<T> Default for Scope<T> {
    fn default() -> Self {
        Scope { head: None }
    }
}

impl<T> Scope<T> {
    pub fn new() -> Self {
        Scope { head: None }
    }

    pub fn extend(&self, name: Name, value: T) -> Self {
        Scope { head: Some(Rc::new(Node { name, value, next: self.head.clone() })) }
    }

    pub fn get(&self, name: &str) -> Option<&T> {
        let mut cur = self.head.as_deref();
        while let Some(n) = cur {
            if &*n.name == name {
                return Some(&n.value);
            }
            cur = n.next.as_deref();
        }
        None
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn is_empty(&self) -> bool {
        self.head.is_none()
    }

    /// Visible bindings, most recent first, shadowed entries skipped.
    pub fn visible(&self) -> Vec<(Name, &T)> {
        let mut seen: Vec<Name> = Vec::new();
        let mut out = Vec::new();
        let mut cur = self.head.as_deref();
        while let Some(n) = cur {
            if !seen.iter().any(|s| *s == n.name) {
                seen.push(n.name.clone());
                out.push((n.name.clone(), &n.value));
            }
            cur = n.next.as_deref();
        }
        out
    }
}

impl<T> Drop for Scope<T> {
    fn drop(&mut self) {
        // Unlink iteratively so long chains do not overflow the stack.
        let mut cur = self.head.take();
        while let Some(rc) = cur {
            match Rc::try_unwrap(rc) {
                Ok(mut node) => cur = node.next.take(),
                Err(_) => break,
            }
        }
    }
}

impl<T> FromIterator<(Name, T)> for Scope<T> {
    fn from_iter<I: IntoIterator<Item = (Name, T)>>(iter: I) -> Self {
        iter.into_iter().fold(Scope::new(), |s, (n, v)| s.extend(n, v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shadowing_and_sharing() {
        let a: Scope<u32> = Scope::new().extend("x".into(), 1);
        let b = a.extend("x".into(), 2).extend("y".into(), 3);
        assert_eq!(a.get("x"), Some(&1));
        assert_eq!(b.get("x"), Some(&2));
        assert_eq!(b.visible().len(), 2);
        assert!(a.get("y").is_none());
    }
}
