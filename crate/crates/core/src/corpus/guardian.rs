//! Optional client for the Guardian open-platform content API.
//!
//! The HTTP layer is abstracted behind [`Transport`] so the paging, retry, and
//! caching logic runs without network access.

use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use serde::Deserialize;

use super::{ingest_jsonl, Corpus, PreprocessConfig, RawRecord};
use crate::error::{Error, Result};

pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

pub trait Transport {
    fn get(&self, url: &str) -> Result<HttpResponse>;
}

#[derive(Debug, Clone)]
pub struct GuardianConfig {
    pub base_url: String,
    pub page_size: usize,
    pub max_retries: u32,
    pub backoff: Duration,
    pub cache_dir: PathBuf,
}

impl Default for GuardianConfig {
    fn default() -> Self {
        GuardianConfig {
            base_url: "https://content.guardianapis.com/search".into(),
            page_size: 50,
            max_retries: 4,
            backoff: Duration::from_millis(500),
            cache_dir: std::env::var_os("HLTM_CACHE_DIR")
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(".hltm-cache")),
        }
    }
}

#[derive(Deserialize)]
struct Envelope {
    response: SearchResponse,
}

#[derive(Deserialize)]
struct SearchResponse {
    #[serde(default)]
    pages: usize,
    #[serde(default)]
    results: Vec<Article>,
}

#[derive(Deserialize)]
struct Article {
    id: String,
    #[serde(rename = "webTitle", default)]
    web_title: String,
    #[serde(default)]
    fields: Option<Fields>,
}

#[derive(Deserialize)]
struct Fields {
    #[serde(rename = "bodyText", default)]
    body_text: String,
}

enum PageError {
    Quota,
    Fatal(Error),
}

pub struct GuardianClient<T> {
    transport: T,
    config: GuardianConfig,
}

fn encode(s: &str) -> String {
    s.bytes()
        .map(|b| match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => (b as char).to_string(),
            _ => format!("%{b:02X}"),
        })
        .collect()
}

impl<T: Transport> GuardianClient<T> {
    pub fn new(transport: T, config: GuardianConfig) -> Self {
        GuardianClient { transport, config }
    }

    fn page(&self, api_key: &str, section: &str, page: usize) -> std::result::Result<SearchResponse, PageError> {
        let url = format!(
            "{}?section={}&page={}&page-size={}&show-fields=bodyText&order-by=newest&api-key={}",
            self.config.base_url,
            encode(section),
            page,
            self.config.page_size,
            encode(api_key)
        );
        let mut attempt = 0;
        loop {
            let resp = self.transport.get(&url).map_err(PageError::Fatal)?;
            match resp.status {
                200 => {
                    let env: Envelope = serde_json::from_str(&resp.body)
                        .map_err(|e| PageError::Fatal(Error::Serialization(e.to_string())))?;
                    return Ok(env.response);
                }
                401 | 403 => return Err(PageError::Fatal(Error::Authentication)),
                429 | 500..=599 if attempt < self.config.max_retries => {
                    std::thread::sleep(self.config.backoff * 2u32.pow(attempt));
                    attempt += 1;
                }
                429 => return Err(PageError::Quota),
                status => {
                    return Err(PageError::Fatal(Error::Http {
                        status,
                        message: resp.body.chars().take(200).collect(),
                    }))
                }
            }
        }
    }

    /// Fetches up to `per_category` articles from each section.
    pub fn fetch_records(&self, api_key: &str, categories: &[String], per_category: usize) -> Result<Vec<RawRecord>> {
        let mut records = Vec::new();
        let mut completed = Vec::new();
        for section in categories {
            let mut got = 0;
            let mut page = 1;
            while got < per_category {
                let resp = match self.page(api_key, section, page) {
                    Ok(r) => r,
                    Err(PageError::Quota) => return Err(Error::QuotaExhausted { completed }),
                    Err(PageError::Fatal(e)) => return Err(e),
                };
                if resp.results.is_empty() {
                    break;
                }
                for article in resp.results.into_iter().take(per_category - got) {
                    let body = article.fields.map(|f| f.body_text).unwrap_or_default();
                    records.push(RawRecord {
                        id: article.id,
                        text: format!("{}\n{}", article.web_title, body),
                        category: section.clone(),
                    });
                    got += 1;
                }
                if page >= resp.pages {
                    break;
                }
                page += 1;
            }
            completed.push(section.clone());
        }
        Ok(records)
    }

    /// Fetches, writes the raw JSONL cache, and ingests it.
    pub fn fetch(
        &self,
        api_key: &str,
        categories: &[String],
        per_category: usize,
        preprocess: &PreprocessConfig,
    ) -> Result<Corpus> {
        let records = self.fetch_records(api_key, categories, per_category)?;
        let path = self.write_cache(categories, per_category, &records)?;
        ingest_jsonl(path, preprocess)
    }

    pub fn write_cache(&self, categories: &[String], per_category: usize, records: &[RawRecord]) -> Result<PathBuf> {
        let dir = &self.config.cache_dir;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let name = format!("guardian_{}_{}.jsonl", categories.join("+").replace('/', "_"), per_category);
        let path = dir.join(name);
        let mut out = std::io::BufWriter::new(std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?);
        for r in records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        out.flush().map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::RefCell;
    use std::collections::VecDeque;

    struct Scripted {
        responses: RefCell<VecDeque<HttpResponse>>,
        urls: RefCell<Vec<String>>,
    }

    impl Scripted {
        fn new(responses: Vec<(u16, String)>) -> Self {
            Scripted {
                responses: RefCell::new(
                    responses.into_iter().map(|(status, body)| HttpResponse { status, body }).collect(),
                ),
                urls: RefCell::new(Vec::new()),
            }
        }
    }

    impl Transport for &Scripted {
        fn get(&self, url: &str) -> Result<HttpResponse> {
            self.urls.borrow_mut().push(url.to_string());
            Ok(self.responses.borrow_mut().pop_front().expect("unexpected request"))
        }
    }

    fn page_body(section: &str, n: usize, pages: usize) -> String {
        let results: Vec<String> = (0..n)
            .map(|i| {
                format!(
                    r#"{{"id":"{section}/{i}","webTitle":"Court ruling {i}","fields":{{"bodyText":"judges justice appeal {section}"}}}}"#
                )
            })
            .collect();
        format!(r#"{{"response":{{"status":"ok","pages":{pages},"results":[{}]}}}}"#, results.join(","))
    }

    fn config(dir: &std::path::Path) -> GuardianConfig {
        GuardianConfig {
            backoff: Duration::ZERO,
            cache_dir: dir.to_path_buf(),
            ..GuardianConfig::default()
        }
    }

    #[test]
    fn count_contract_and_cache() {
        let dir = tempfile::tempdir().unwrap();
        let t = Scripted::new(vec![(200, page_body("law", 5, 3)), (200, page_body("business", 5, 3))]);
        let client = GuardianClient::new(&t, config(dir.path()));
        let cats = vec!["law".to_string(), "business".to_string()];
        let recs = client.fetch_records("k", &cats, 5).unwrap();
        assert_eq!(recs.len(), 10);
        let path = client.write_cache(&cats, 5, &recs).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text.lines().count(), 10);
        assert!(t.urls.borrow()[0].contains("section=law"));
    }

    #[test]
    fn pages_until_quota_met() {
        let dir = tempfile::tempdir().unwrap();
        let t = Scripted::new(vec![(200, page_body("law", 3, 5)), (200, page_body("law", 3, 5))]);
        let client = GuardianClient::new(&t, config(dir.path()));
        let recs = client.fetch_records("k", &["law".into()], 5).unwrap();
        assert_eq!(recs.len(), 5);
        assert!(t.urls.borrow()[1].contains("page=2"));
    }

    #[test]
    fn invalid_key_is_auth_error() {
        let dir = tempfile::tempdir().unwrap();
        let t = Scripted::new(vec![(401, "{}".into())]);
        let client = GuardianClient::new(&t, config(dir.path()));
        assert!(matches!(client.fetch_records("bad", &["law".into()], 5), Err(Error::Authentication)));
    }

    #[test]
    fn quota_exhaustion_reports_completed() {
        let dir = tempfile::tempdir().unwrap();
        let mut script = vec![(200, page_body("law", 2, 1))];
        script.extend((0..5).map(|_| (429, String::new())));
        let t = Scripted::new(script);
        let client = GuardianClient::new(&t, config(dir.path()));
        match client.fetch_records("k", &["law".into(), "money".into()], 2) {
            Err(Error::QuotaExhausted { completed }) => assert_eq!(completed, ["law"]),
            other => panic!("{:?}", other.map(|r| r.len())),
        }
    }

    #[test]
    fn transient_errors_are_retried() {
        let dir = tempfile::tempdir().unwrap();
        let t = Scripted::new(vec![(503, String::new()), (200, page_body("law", 2, 1))]);
        let client = GuardianClient::new(&t, config(dir.path()));
        assert_eq!(client.fetch_records("k", &["law".into()], 2).unwrap().len(), 2);
    }

    #[test]
    fn fetch_ingests_cache() {
        let dir = tempfile::tempdir().unwrap();
        let t = Scripted::new(vec![(200, page_body("law", 4, 1)), (200, page_body("money", 4, 1))]);
        let client = GuardianClient::new(&t, config(dir.path()));
        let pre = PreprocessConfig { min_df: 1, max_df_fraction: 1.0, ..Default::default() };
        let corpus = client.fetch("k", &["law".into(), "money".into()], 4, &pre).unwrap();
        assert_eq!(corpus.num_docs(), 8);
        assert_eq!(corpus.categories, ["law", "money"]);
    }
}
