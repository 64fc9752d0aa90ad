//! Offline pricing contracts, the max-over-categories payment rule, and a
//! deterministic simulation of the seven-step real-time page-load protocol
//! with rotating anonymous session tokens.
//!
//! The broker sits between users and advertisers: on each page load it
//! emits a fresh signed token, answers contracted advertisers' value-of-data
//! queries for that token, collects payments, and rotates the token so that
//! no party can link a user across page loads. The real user ID never
//! leaves [`SessionState`].

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::vod::VodReport;

#[derive(Debug, Error)]
pub enum MarketError {
    #[error("price function needs at least one breakpoint")]
    EmptyPriceFunction,
    #[error("first breakpoint must be at vod=0, got {0}")]
    FirstBreakpointNotZero(f64),
    #[error("breakpoint vods must be strictly increasing within [0,1]: {0} then {1}")]
    BreakpointsNotIncreasing(f64, f64),
    #[error("price must be non-negative, got {0}")]
    NegativePrice(f64),
    #[error("contract must price at least one category")]
    EmptyContract,
    #[error("vod must lie in [0,1], got {0}")]
    VodOutOfRange(f64),
    #[error("no categories to pay on")]
    EmptyVodMap,
    #[error("category {0:?} is not priced by the contract")]
    UnpricedCategory(String),
    #[error("category {0:?} is not covered by the value-of-data report")]
    UncoveredCategory(String),
    #[error("user row {0} out of range")]
    UserRowOutOfRange(usize),
    #[error("malformed contract JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Piecewise-linear price curve over value-of-data in [0,1].
///
/// Breakpoints are strictly increasing in vod starting at 0; past the last
/// breakpoint the price is held constant, so the curve is total on [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct PriceFunction {
    breakpoints: Vec<(f64, f64)>,
}

impl PriceFunction {
    pub fn new(breakpoints: Vec<(f64, f64)>) -> Result<Self, MarketError> {
        let first = breakpoints.first().ok_or(MarketError::EmptyPriceFunction)?;
        if first.0 != 0.0 {
            return Err(MarketError::FirstBreakpointNotZero(first.0));
        }
        for pair in breakpoints.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(MarketError::BreakpointsNotIncreasing(pair[0].0, pair[1].0));
            }
        }
        for &(v, p) in &breakpoints {
            if !(0.0..=1.0).contains(&v) {
                return Err(MarketError::VodOutOfRange(v));
            }
            if !(p >= 0.0) {
                return Err(MarketError::NegativePrice(p));
            }
        }
        Ok(Self { breakpoints })
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    /// Price at the given value-of-data.
    pub fn evaluate(&self, vod: f64) -> Result<f64, MarketError> {
        if !(0.0..=1.0).contains(&vod) {
            return Err(MarketError::VodOutOfRange(vod));
        }
        let last = *self.breakpoints.last().unwrap();
        if vod >= last.0 {
            return Ok(last.1);
        }
        let hi = self.breakpoints.iter().position(|&(v, _)| v > vod).unwrap();
        let (v0, p0) = self.breakpoints[hi - 1];
        let (v1, p1) = self.breakpoints[hi];
        let t = (vod - v0) / (v1 - v0);
        Ok(p0 + t * (p1 - p0))
    }
}

/// An advertiser's offline contract: one price curve per category of
/// interest.
#[derive(Debug, Clone)]
pub struct Contract {
    pub advertiser_id: String,
    prices: BTreeMap<String, PriceFunction>,
}

#[derive(Deserialize)]
struct ContractJson {
    advertiser_id: String,
    prices: BTreeMap<String, Vec<(f64, f64)>>,
}

impl Contract {
    pub fn new(
        advertiser_id: String,
        prices: BTreeMap<String, PriceFunction>,
    ) -> Result<Self, MarketError> {
        if prices.is_empty() {
            return Err(MarketError::EmptyContract);
        }
        Ok(Self { advertiser_id, prices })
    }

    /// Loads `{advertiser_id, prices: {category: [[vod, price], …]}}`.
    pub fn from_json(text: &str) -> Result<Self, MarketError> {
        let raw: ContractJson = serde_json::from_str(text)?;
        let mut prices = BTreeMap::new();
        for (category, bps) in raw.prices {
            prices.insert(category, PriceFunction::new(bps)?);
        }
        Contract::new(raw.advertiser_id, prices)
    }

    pub fn from_json_reader<R: Read>(mut reader: R) -> Result<Self, MarketError> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        Self::from_json(&text)
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.prices.keys().map(String::as_str)
    }

    pub fn price(&self, category: &str) -> Option<&PriceFunction> {
        self.prices.get(category)
    }
}

/// 16-bit signature carried in the top bits of every broker-issued token.
pub const TOKEN_SIGNATURE: u16 = 0xAD0B;

/// Opaque 128-bit anonymous token: fixed 16-bit signature prefix, 112
/// random bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Token(pub u128);

impl Token {
    fn generate(rng: &mut ChaCha12Rng) -> Self {
        let body: u128 = rng.random::<u128>() & ((1u128 << 112) - 1);
        Token((u128::from(TOKEN_SIGNATURE) << 112) | body)
    }

    pub fn hex(&self) -> String {
        format!("{:032x}", self.0)
    }
}

/// Whether a token carries the broker's signature prefix.
pub fn is_signed_token(token: Token) -> bool {
    (token.0 >> 112) as u16 == TOKEN_SIGNATURE
}

/// Per-user broker-side session. The real user ID is held privately and
/// never appears in any exported record; advertisers only ever see the
/// current token, which changes after every completed page load.
#[derive(Debug)]
pub struct SessionState {
    user_id: String,
    current_token: Token,
    /// Append-only (page_load_seq, token) audit trail; all tokens distinct.
    id_history: Vec<(u64, Token)>,
    token_rng: ChaCha12Rng,
    page_loads: u64,
}

impl SessionState {
    /// The token stream is derived from the seed alone, never from the user
    /// ID, so the observable token sequence is identical for any two users
    /// opened with the same seed.
    pub fn new(user_id: impl Into<String>, seed: u64) -> Self {
        let mut token_rng = rng::stream(seed, "session-token");
        let current_token = Token::generate(&mut token_rng);
        SessionState {
            user_id: user_id.into(),
            current_token,
            id_history: vec![(0, current_token)],
            token_rng,
            page_loads: 0,
        }
    }

    pub fn current_token(&self) -> Token {
        self.current_token
    }

    pub fn id_history(&self) -> &[(u64, Token)] {
        &self.id_history
    }

    pub fn page_loads(&self) -> u64 {
        self.page_loads
    }

    /// Whether this session issued the token (current or past).
    pub fn owns_token(&self, token: Token) -> bool {
        self.id_history.iter().any(|&(_, t)| t == token)
    }

    /// Broker-private check that this session belongs to the given user.
    /// The ID itself is never returned or serialized.
    pub fn is_user(&self, user_id: &str) -> bool {
        self.user_id == user_id
    }

    /// Replaces the current token with a fresh one, regenerating on the
    /// (astronomically unlikely) collision with any prior token.
    pub fn rotate_id(&mut self) {
        loop {
            let token = Token::generate(&mut self.token_rng);
            if self.id_history.iter().all(|&(_, t)| t != token) {
                self.page_loads += 1;
                self.current_token = token;
                self.id_history.push((self.page_loads, token));
                return;
            }
        }
    }
}

/// One settled advertiser payment for one page load.
#[derive(Debug, Clone, PartialEq)]
pub struct PaymentRecord {
    pub advertiser_id: String,
    pub token: Token,
    /// Value-of-data the advertiser was quoted, per contracted category.
    pub vod_by_category: BTreeMap<String, f64>,
    pub paid: f64,
    /// Category achieving the maximum price (lexicographic tie-break).
    pub chosen_category: String,
}

/// Price of the single best category: paid = max over contracted
/// categories of that category's price curve at its quoted value-of-data.
/// Ties break to the lexicographically smallest category name.
pub fn payment(
    contract: &Contract,
    token: Token,
    vod_by_category: &BTreeMap<String, f64>,
) -> Result<PaymentRecord, MarketError> {
    if vod_by_category.is_empty() {
        return Err(MarketError::EmptyVodMap);
    }
    let mut best: Option<(f64, &str)> = None;
    for (category, &vod) in vod_by_category {
        let curve = contract
            .price(category)
            .ok_or_else(|| MarketError::UnpricedCategory(category.clone()))?;
        let price = curve.evaluate(vod)?;
        // BTreeMap iterates categories in ascending order, so keeping the
        // first strict maximum realizes the lexicographic tie-break.
        if best.map_or(true, |(p, _)| price > p) {
            best = Some((price, category));
        }
    }
    let (paid, chosen) = best.unwrap();
    Ok(PaymentRecord {
        advertiser_id: contract.advertiser_id.clone(),
        token,
        vod_by_category: vod_by_category.clone(),
        paid,
        chosen_category: chosen.to_string(),
    })
}

/// What an outside (non-contracted) observer can see of one page load:
/// only the anonymous token. Deliberately excludes every user-dependent
/// quantity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservableEvent {
    pub page_load_seq: u64,
    pub token: Token,
}

/// Quoted per-category value-of-data for one user row of a
/// [`VodReport`], keyed by the report's category names.
fn vod_vector_for(
    contract: &Contract,
    report: &VodReport,
    categories: &[String],
    user_row: usize,
) -> Result<BTreeMap<String, f64>, MarketError> {
    if user_row >= report.per_pair.nrows() {
        return Err(MarketError::UserRowOutOfRange(user_row));
    }
    let mut vods = BTreeMap::new();
    for category in contract.categories() {
        let j = categories
            .iter()
            .position(|c| c == category)
            .ok_or_else(|| MarketError::UncoveredCategory(category.to_string()))?;
        vods.insert(category.to_string(), report.per_pair[[user_row, j]].clamp(0.0, 1.0));
    }
    Ok(vods)
}

/// One simulated page load for one user, end to end:
///
/// 1. the broker emits the current anonymous token with the page request;
/// 2. each contracted advertiser checks the token carries the broker
///    signature;
/// 3. it queries the broker for the token's value-of-data vector over its
///    contracted categories;
/// 4. the broker answers from a frozen snapshot of `report`;
/// 5. the advertiser serves against the anonymized payload;
/// 6. it pays per [`payment`] (query-implies-pay: settlement is atomic);
/// 7. the broker rotates the token so the next load is unlinkable.
///
/// Non-contracted parties observe only the token. Returns the settled
/// payments and the observer-visible event.
pub fn simulate_page_load(
    state: &mut SessionState,
    advertisers: &[Contract],
    report: &VodReport,
    categories: &[String],
    user_row: usize,
) -> Result<(Vec<PaymentRecord>, ObservableEvent), MarketError> {
    let token = state.current_token();
    let event = ObservableEvent { page_load_seq: state.page_loads(), token };
    let mut payments = Vec::with_capacity(advertisers.len());
    for contract in advertisers {
        debug_assert!(is_signed_token(token));
        let vods = vod_vector_for(contract, report, categories, user_row)?;
        payments.push(payment(contract, token, &vods)?);
    }
    state.rotate_id();
    Ok((payments, event))
}

// --- Optional newline-delimited JSON protocol server -----------------------
//
// Exposes check_id / query_vod / pay over a local socket for integration
// testing; every response echoes the request's correlation id. No logic
// lives here beyond dispatch into the functions above.

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Request {
    CheckId { corr: u64, token: String },
    QueryVod { corr: u64, token: String, categories: Vec<String> },
    Pay { corr: u64, token: String, advertiser_id: String, vod_by_category: BTreeMap<String, f64> },
}

#[derive(Serialize)]
#[serde(untagged)]
enum Response {
    CheckId { corr: u64, belongs: bool },
    QueryVod { corr: u64, vod_by_category: BTreeMap<String, f64> },
    Pay { corr: u64, paid: f64, chosen_category: String },
    Error { corr: u64, error: String },
}

/// Broker-side state served over the protocol socket. The value-of-data
/// snapshot is frozen per page load; `user_row` is broker-private.
pub struct ProtocolServer {
    listener: TcpListener,
    state: SessionState,
    contracts: Vec<Contract>,
    report: VodReport,
    categories: Vec<String>,
    user_row: usize,
}

impl ProtocolServer {
    pub fn bind(
        addr: &str,
        state: SessionState,
        contracts: Vec<Contract>,
        report: VodReport,
        categories: Vec<String>,
        user_row: usize,
    ) -> Result<Self, MarketError> {
        Ok(Self { listener: TcpListener::bind(addr)?, state, contracts, report, categories, user_row })
    }

    pub fn local_addr(&self) -> std::io::Result<std::net::SocketAddr> {
        self.listener.local_addr()
    }

    /// Serves exactly one connection to completion, then returns. Payments
    /// within the connection read the frozen snapshot; the token rotates
    /// when the connection (one page load) closes.
    pub fn serve_one(&mut self) -> Result<(), MarketError> {
        let (stream, _) = self.listener.accept()?;
        self.handle(stream)?;
        self.state.rotate_id();
        Ok(())
    }

    fn handle(&mut self, stream: TcpStream) -> Result<(), MarketError> {
        let mut writer = stream.try_clone()?;
        let reader = BufReader::new(stream);
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let response = self.dispatch(&line);
            serde_json::to_writer(&mut writer, &response)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }

    fn dispatch(&self, line: &str) -> Response {
        let request: Request = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => return Response::Error { corr: 0, error: e.to_string() },
        };
        match request {
            Request::CheckId { corr, token } => {
                let belongs = parse_token(&token)
                    .map(|t| is_signed_token(t) && self.state.owns_token(t))
                    .unwrap_or(false);
                Response::CheckId { corr, belongs }
            }
            Request::QueryVod { corr, token, categories } => {
                match self.query_vod(&token, &categories) {
                    Ok(vod_by_category) => Response::QueryVod { corr, vod_by_category },
                    Err(e) => Response::Error { corr, error: e.to_string() },
                }
            }
            Request::Pay { corr, token, advertiser_id, vod_by_category } => {
                match self.pay(&token, &advertiser_id, &vod_by_category) {
                    Ok(record) => Response::Pay {
                        corr,
                        paid: record.paid,
                        chosen_category: record.chosen_category,
                    },
                    Err(e) => Response::Error { corr, error: e.to_string() },
                }
            }
        }
    }

    fn query_vod(
        &self,
        token: &str,
        categories: &[String],
    ) -> Result<BTreeMap<String, f64>, MarketError> {
        let token = parse_token(token).ok_or(MarketError::EmptyVodMap)?;
        if token != self.state.current_token() {
            return Err(MarketError::VodOutOfRange(-1.0));
        }
        let mut vods = BTreeMap::new();
        for category in categories {
            let j = self
                .categories
                .iter()
                .position(|c| c == category)
                .ok_or_else(|| MarketError::UncoveredCategory(category.clone()))?;
            vods.insert(
                category.clone(),
                self.report.per_pair[[self.user_row, j]].clamp(0.0, 1.0),
            );
        }
        Ok(vods)
    }

    fn pay(
        &self,
        token: &str,
        advertiser_id: &str,
        vods: &BTreeMap<String, f64>,
    ) -> Result<PaymentRecord, MarketError> {
        let token = parse_token(token).ok_or(MarketError::EmptyVodMap)?;
        let contract = self
            .contracts
            .iter()
            .find(|c| c.advertiser_id == advertiser_id)
            .ok_or_else(|| MarketError::UnpricedCategory(advertiser_id.to_string()))?;
        payment(contract, token, vods)
    }
}

fn parse_token(hex: &str) -> Option<Token> {
    u128::from_str_radix(hex, 16).ok().map(Token)
}
