//! Address geocoding against an HTTP service, with an on-disk cache.
//!
//! The service contract is a GET request carrying the address as a query
//! parameter, answered by a JSON document with `x` and `y` fields (either at
//! the top level or on the first element of a `results` array). An empty
//! `results` array, or `"found": 0`, means no match.
//!
//! Every answer, including "no match", is cached as one JSON document per
//! address (file name = SHA-256 of the address key), so a second run is fully
//! offline. Cache writes go to a temporary file that is renamed into place.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::BuildingRecord;
use crate::error::{Error, Result};
use crate::raster::GeoPoint;

#[derive(Debug, Clone, PartialEq)]
pub enum LookupError {
    /// Network failures, timeouts, 5xx and 429 answers. Retried.
    Transient(String),
    /// The service answered but the body does not follow the contract.
    Malformed(String),
}

pub trait GeocodeTransport: Send + Sync {
    /// `Ok(None)` when the service has no match for the address.
    fn lookup(&self, address: &str) -> std::result::Result<Option<GeoPoint>, LookupError>;
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
    base_url: String,
    query_param: String,
}

impl HttpTransport {
    pub fn new(base_url: impl Into<String>, query_param: impl Into<String>, timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Service(format!("cannot build http client: {e}")))?;
        Ok(Self {
            client,
            base_url: base_url.into(),
            query_param: query_param.into(),
        })
    }
}

impl GeocodeTransport for HttpTransport {
    fn lookup(&self, address: &str) -> std::result::Result<Option<GeoPoint>, LookupError> {
        let response = self
            .client
            .get(&self.base_url)
            .query(&[(self.query_param.as_str(), address)])
            .send()
            .map_err(|e| LookupError::Transient(e.to_string()))?;
        let status = response.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(LookupError::Transient(format!("http status {status}")));
        }
        if !status.is_success() {
            return Err(LookupError::Malformed(format!("http status {status}")));
        }
        let body = response.text().map_err(|e| LookupError::Transient(e.to_string()))?;
        parse_response(&body).map_err(LookupError::Malformed)
    }
}

fn coordinate(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
    .filter(|f: &f64| f.is_finite())
}

fn point_from(obj: &serde_json::Map<String, Value>) -> Option<std::result::Result<GeoPoint, String>> {
    let x = obj.get("x").or_else(|| obj.get("X"));
    let y = obj.get("y").or_else(|| obj.get("Y"));
    match (x, y) {
        (None, None) => None,
        (Some(x), Some(y)) => Some(match (coordinate(x), coordinate(y)) {
            (Some(x), Some(y)) => Ok(GeoPoint::new(x, y)),
            _ => Err(format!("non-numeric coordinates {x} / {y}")),
        }),
        _ => Some(Err("only one of x/y present".into())),
    }
}

/// Interprets a service response body.
pub fn parse_response(body: &str) -> std::result::Result<Option<GeoPoint>, String> {
    let doc: Value = serde_json::from_str(body).map_err(|e| format!("invalid json: {e}"))?;
    let obj = doc.as_object().ok_or("response is not a json object")?;
    let null = |k: &str, alt: &str| obj.get(k).or_else(|| obj.get(alt)) == Some(&Value::Null);
    if null("x", "X") && null("y", "Y") {
        return Ok(None);
    }
    if let Some(p) = point_from(obj) {
        return p.map(Some);
    }
    if obj.get("found").and_then(Value::as_u64) == Some(0) {
        return Ok(None);
    }
    match obj.get("results") {
        Some(Value::Array(items)) => match items.first() {
            None => Ok(None),
            Some(Value::Object(first)) => match point_from(first) {
                Some(p) => p.map(Some),
                None => Err("first result has no x/y fields".into()),
            },
            Some(_) => Err("results entries are not objects".into()),
        },
        Some(_) => Err("`results` is not an array".into()),
        None => Err("response has neither x/y nor results".into()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheEntry {
    address_key: String,
    found: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GeocodeCache {
    dir: PathBuf,
}

impl GeocodeCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::path_io(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, address: &str) -> PathBuf {
        let digest = Sha256::digest(address.as_bytes());
        let name: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.dir.join(format!("{name}.json"))
    }

    /// `None` on a miss; `Some(None)` for a cached "no match".
    pub fn get(&self, address: &str) -> Result<Option<Option<GeoPoint>>> {
        let path = self.path_for(address);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::path_io(path, e)),
        };
        let entry: CacheEntry = serde_json::from_str(&text)?;
        if entry.address_key != address {
            // Hash collision or a hand-edited file; treat as a miss.
            log::warn!("cache entry {} belongs to `{}`", path.display(), entry.address_key);
            return Ok(None);
        }
        Ok(Some(match (entry.found, entry.x, entry.y) {
            (true, Some(x), Some(y)) => Some(GeoPoint::new(x, y)),
            _ => None,
        }))
    }

    pub fn put(&self, address: &str, location: Option<GeoPoint>) -> Result<()> {
        let entry = CacheEntry {
            address_key: address.to_string(),
            found: location.is_some(),
            x: location.map(|p| p.x),
            y: location.map(|p| p.y),
        };
        let bytes = serde_json::to_vec_pretty(&entry)?;
        let path = self.path_for(address);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| Error::path_io(&self.dir, e))?;
        std::io::Write::write_all(&mut tmp, &bytes)?;
        tmp.persist(&path).map_err(|e| Error::path_io(&path, e.error))?;
        Ok(())
    }
}

/// Serialises request start times to at most one per `interval`.
struct Throttle {
    interval: Duration,
    next_slot: Mutex<Option<Instant>>,
}

impl Throttle {
    fn new(requests_per_second: f64) -> Self {
        let interval = if requests_per_second > 0.0 {
            Duration::from_secs_f64(1.0 / requests_per_second)
        } else {
            Duration::ZERO
        };
        Self {
            interval,
            next_slot: Mutex::new(None),
        }
    }

    fn wait(&self) {
        let slot = {
            let mut next = self.next_slot.lock().expect("throttle lock poisoned");
            let now = Instant::now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + self.interval);
            slot
        };
        let now = Instant::now();
        if slot > now {
            thread::sleep(slot - now);
        }
    }
}

pub struct GeocodeClient {
    pub transport: Arc<dyn GeocodeTransport>,
    pub cache: GeocodeCache,
    /// Requests per second across all workers; `<= 0` disables throttling.
    pub rate_limit: f64,
    pub max_concurrency: usize,
    pub max_retries: u32,
    pub retry_backoff: Duration,
}

impl GeocodeClient {
    pub fn new(transport: Arc<dyn GeocodeTransport>, cache: GeocodeCache) -> Self {
        Self {
            transport,
            cache,
            rate_limit: 1.0,
            max_concurrency: 4,
            max_retries: 3,
            retry_backoff: Duration::from_millis(500),
        }
    }

    fn fetch_with_retries(&self, address: &str, throttle: &Throttle) -> Result<Option<GeoPoint>> {
        let mut attempt = 0;
        loop {
            throttle.wait();
            match self.transport.lookup(address) {
                Ok(found) => return Ok(found),
                Err(LookupError::Malformed(message)) => {
                    return Err(Error::MalformedResponse {
                        address: address.to_string(),
                        message,
                    })
                }
                Err(LookupError::Transient(message)) => {
                    if attempt >= self.max_retries {
                        return Err(Error::Service(format!(
                            "`{address}` failed after {} attempts: {message}",
                            attempt + 1
                        )));
                    }
                    log::warn!("geocode `{address}` attempt {} failed: {message}", attempt + 1);
                    thread::sleep(self.retry_backoff * 2u32.pow(attempt));
                    attempt += 1;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    pub address_key: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct GeocodeOutcome {
    /// Every record that has a location, in input order.
    pub records: Vec<BuildingRecord>,
    pub rejected: Vec<Rejection>,
    pub cache_hits: usize,
    pub requests: usize,
}

impl GeocodeOutcome {
    pub fn write_rejections<W: std::io::Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["address_key", "reason"])?;
        for r in &self.rejected {
            w.write_record([&r.address_key, &r.reason])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Resolves every record without a location. Cached answers are never
/// re-fetched; answers fetched before a failure stay cached.
pub fn geocode(client: &GeocodeClient, records: Vec<BuildingRecord>) -> Result<GeocodeOutcome> {
    let wanted: BTreeSet<&str> = records
        .iter()
        .filter(|r| r.needs_geocoding())
        .map(|r| r.address_key.as_str())
        .collect();

    let mut resolved: BTreeMap<String, Option<GeoPoint>> = BTreeMap::new();
    let mut pending: Vec<&str> = Vec::new();
    for address in wanted {
        match client.cache.get(address)? {
            Some(hit) => {
                resolved.insert(address.to_string(), hit);
            }
            None => pending.push(address),
        }
    }
    let cache_hits = resolved.len();
    let requests = pending.len();

    if !pending.is_empty() {
        let throttle = Throttle::new(client.rate_limit);
        let next = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let results: Mutex<Vec<(String, Option<GeoPoint>)>> = Mutex::new(Vec::new());
        let failure: Mutex<Option<Error>> = Mutex::new(None);
        let workers = client.max_concurrency.clamp(1, pending.len());

        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    if abort.load(Ordering::SeqCst) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(address) = pending.get(i) else { break };
                    let outcome = client
                        .fetch_with_retries(address, &throttle)
                        .and_then(|loc| client.cache.put(address, loc).map(|_| loc));
                    match outcome {
                        Ok(loc) => results.lock().expect("poisoned").push((address.to_string(), loc)),
                        Err(e) => {
                            abort.store(true, Ordering::SeqCst);
                            failure.lock().expect("poisoned").get_or_insert(e);
                            break;
                        }
                    }
                });
            }
        });

        if let Some(e) = failure.into_inner().expect("poisoned") {
            return Err(e);
        }
        resolved.extend(results.into_inner().expect("poisoned"));
    }

    let mut out = Vec::with_capacity(records.len());
    let mut rejected = Vec::new();
    let mut reported = BTreeSet::new();
    for mut record in records {
        if record.location.is_none() {
            match resolved.get(&record.address_key).copied().flatten() {
                Some(p) => record.location = Some(p),
                None => {
                    if reported.insert(record.address_key.clone()) {
                        rejected.push(Rejection {
                            address_key: record.address_key.clone(),
                            reason: "no match from geocoding service".into(),
                        });
                    }
                    continue;
                }
            }
        }
        out.push(record);
    }
    Ok(GeocodeOutcome {
        records: out,
        rejected,
        cache_hits,
        requests,
    })
}

/// Fills locations from the cache only; never touches the network. Records
/// with no cached answer are left without a location.
pub fn apply_cached_locations(cache: &GeocodeCache, records: &mut [BuildingRecord]) -> Result<usize> {
    let mut filled = 0;
    for record in records.iter_mut().filter(|r| r.needs_geocoding()) {
        if let Some(Some(p)) = cache.get(&record.address_key)? {
            record.location = Some(p);
            filled += 1;
        }
    }
    Ok(filled)
}
