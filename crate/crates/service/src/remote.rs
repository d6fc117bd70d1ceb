//! Fetching things that live elsewhere: release indexes, recipes, and
//! reference artifacts, addressed either by filesystem path or HTTP URL.

use std::path::PathBuf;
use std::time::Duration;

use verifier_core::index::{FileIndexSource, IndexError, IndexSource};

fn http_client() -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(30))
        .build()
        .expect("constructing an http client cannot fail with static options")
}

/// A release index served over HTTP.
pub struct HttpIndexSource {
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpIndexSource {
    pub fn new(url: impl Into<String>) -> HttpIndexSource {
        HttpIndexSource {
            url: url.into(),
            client: http_client(),
        }
    }
}

impl IndexSource for HttpIndexSource {
    fn fetch(&self) -> Result<String, IndexError> {
        self.client
            .get(&self.url)
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.text())
            .map_err(|e| IndexError::SourceUnreachable(e.to_string()))
    }

    fn describe(&self) -> String {
        self.url.clone()
    }
}

/// Index source chosen by the shape of its locator: URLs go over HTTP,
/// anything else is a filesystem path.
pub enum AnyIndexSource {
    File(FileIndexSource),
    Http(HttpIndexSource),
}

impl AnyIndexSource {
    pub fn open(locator: &str) -> AnyIndexSource {
        if locator.starts_with("http://") || locator.starts_with("https://") {
            AnyIndexSource::Http(HttpIndexSource::new(locator))
        } else {
            AnyIndexSource::File(FileIndexSource::new(locator))
        }
    }
}

impl IndexSource for AnyIndexSource {
    fn fetch(&self) -> Result<String, IndexError> {
        match self {
            AnyIndexSource::File(s) => s.fetch(),
            AnyIndexSource::Http(s) => s.fetch(),
        }
    }

    fn describe(&self) -> String {
        match self {
            AnyIndexSource::File(s) => s.describe(),
            AnyIndexSource::Http(s) => s.describe(),
        }
    }
}

/// Resolves recipe/artifact references from a release index entry.
pub trait RefFetcher: Send + Sync {
    fn fetch(&self, reference: &str) -> Result<Vec<u8>, String>;
}

/// Fetches `http(s)://` references over the network and everything else
/// from the filesystem, resolving relative paths under `root`.
pub struct StdRefFetcher {
    client: reqwest::blocking::Client,
    root: Option<PathBuf>,
}

impl StdRefFetcher {
    pub fn new(root: Option<PathBuf>) -> StdRefFetcher {
        StdRefFetcher {
            client: http_client(),
            root,
        }
    }
}

impl RefFetcher for StdRefFetcher {
    fn fetch(&self, reference: &str) -> Result<Vec<u8>, String> {
        if reference.starts_with("http://") || reference.starts_with("https://") {
            return self
                .client
                .get(reference)
                .send()
                .and_then(|r| r.error_for_status())
                .and_then(|r| r.bytes())
                .map(|b| b.to_vec())
                .map_err(|e| format!("fetching {reference}: {e}"));
        }
        let path = match (&self.root, reference.starts_with('/')) {
            (Some(root), false) => root.join(reference),
            _ => PathBuf::from(reference),
        };
        std::fs::read(&path).map_err(|e| format!("reading {}: {e}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_fetcher_resolves_relative_references_under_root() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("recipes")).unwrap();
        std::fs::write(dir.path().join("recipes/x.recipe"), b"name = x\n").unwrap();
        let fetcher = StdRefFetcher::new(Some(dir.path().to_path_buf()));
        assert_eq!(fetcher.fetch("recipes/x.recipe").unwrap(), b"name = x\n");
        let abs = dir.path().join("recipes/x.recipe");
        assert_eq!(fetcher.fetch(abs.to_str().unwrap()).unwrap(), b"name = x\n");
        assert!(fetcher.fetch("recipes/missing.recipe").is_err());
    }

    #[test]
    fn index_source_dispatches_on_locator_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("release.index");
        std::fs::write(&path, "# empty\n").unwrap();
        let src = AnyIndexSource::open(path.to_str().unwrap());
        assert!(matches!(src, AnyIndexSource::File(_)));
        assert_eq!(src.fetch().unwrap(), "# empty\n");
        let http = AnyIndexSource::open("http://127.0.0.1:1/index");
        assert!(matches!(http, AnyIndexSource::Http(_)));
        assert!(http.fetch().is_err());
    }
}
