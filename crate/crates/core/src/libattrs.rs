//! Attributes of well-known library functions that have no definition in
//! the analyzed program.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

pub const NORETURN: &str = "noreturn";
pub const ALLOCATOR: &str = "allocator";
pub const DEALLOCATOR: &str = "deallocator";

const BUILTIN: &[(&str, &[&str])] = &[
    ("malloc", &[ALLOCATOR]),
    ("calloc", &[ALLOCATOR]),
    ("realloc", &[ALLOCATOR, DEALLOCATOR]),
    ("reallocarray", &[ALLOCATOR, DEALLOCATOR]),
    ("aligned_alloc", &[ALLOCATOR]),
    ("valloc", &[ALLOCATOR]),
    ("memalign", &[ALLOCATOR]),
    ("posix_memalign", &[ALLOCATOR]),
    ("strdup", &[ALLOCATOR]),
    ("strndup", &[ALLOCATOR]),
    ("alloca", &[ALLOCATOR]),
    ("__builtin_alloca", &[ALLOCATOR]),
    ("fopen", &[ALLOCATOR]),
    ("fdopen", &[ALLOCATOR]),
    ("tmpfile", &[ALLOCATOR]),
    ("opendir", &[ALLOCATOR]),
    ("getline", &[ALLOCATOR]),
    ("asprintf", &[ALLOCATOR]),
    ("free", &[DEALLOCATOR]),
    ("cfree", &[DEALLOCATOR]),
    ("fclose", &[DEALLOCATOR]),
    ("closedir", &[DEALLOCATOR]),
    ("munmap", &[DEALLOCATOR]),
    ("mmap", &[ALLOCATOR]),
    ("exit", &[NORETURN]),
    ("_exit", &[NORETURN]),
    ("_Exit", &[NORETURN]),
    ("quick_exit", &[NORETURN]),
    ("abort", &[NORETURN]),
    ("__assert_fail", &[NORETURN]),
    ("__assert_rtn", &[NORETURN]),
    ("__assert", &[NORETURN]),
    ("longjmp", &[NORETURN]),
    ("siglongjmp", &[NORETURN]),
    ("pthread_exit", &[NORETURN]),
    ("err", &[NORETURN]),
    ("errx", &[NORETURN]),
    ("verr", &[NORETURN]),
    ("verrx", &[NORETURN]),
    ("reach_error", &[NORETURN]),
    ("__VERIFIER_error", &[NORETURN]),
    ("__builtin_unreachable", &[NORETURN]),
    ("__builtin_trap", &[NORETURN]),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LibAttrs {
    map: BTreeMap<String, BTreeSet<String>>,
}

impl Default for LibAttrs {
    fn default() -> Self {
        Self::builtin()
    }
}

impl LibAttrs {
    pub fn builtin() -> Self {
        let map = BUILTIN
            .iter()
            .map(|(n, a)| (n.to_string(), a.iter().map(|s| s.to_string()).collect()))
            .collect();
        LibAttrs { map }
    }

    pub fn empty() -> Self {
        LibAttrs { map: BTreeMap::new() }
    }

    /// Overlay entries from a JSON object `{"name": ["attr", ...]}`; a listed
    /// name replaces the built-in entry.
    pub fn overlay_json(&mut self, json: &str) -> Result<(), serde_json::Error> {
        let extra: BTreeMap<String, Vec<String>> = serde_json::from_str(json)?;
        for (name, attrs) in extra {
            self.map.insert(name, attrs.into_iter().collect());
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> BTreeSet<String> {
        self.map.get(name).cloned().unwrap_or_default()
    }

    pub fn has(&self, name: &str, attr: &str) -> bool {
        self.map.get(name).is_some_and(|s| s.contains(attr))
    }

    pub fn is_known(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }
}
