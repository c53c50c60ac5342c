//! Close functions: rules deciding when a stream receiver observably closes.
//!
//! A secure close function may only look at the concatenated sender output,
//! the list of receiver inputs so far, the close history and the final input.
//! [`CloseContext`] carries exactly those four values. Whether a registered
//! function respects that restriction is declared through [`CloseFnMeta`]; it
//! cannot be verified for arbitrary code.

use rand::RngCore;

/// Inputs available to a secure close function.
#[derive(Clone, Copy, Debug)]
pub struct CloseContext<'a> {
    /// Concatenation of every `Send` output.
    pub sent: &'a [u8],
    /// Earlier `Recv` inputs, in order, excluding the final one.
    pub recv_inputs: &'a [Vec<u8>],
    /// Close flags returned by the earlier `Recv` calls.
    pub close_history: &'a [bool],
    /// Input to the `Recv` call being judged.
    pub final_input: &'a [u8],
}

impl<'a> CloseContext<'a> {
    /// Total bytes received including the final input.
    pub fn total_received(&self) -> usize {
        self.recv_inputs.iter().map(Vec::len).sum::<usize>() + self.final_input.len()
    }

    pub fn already_closed(&self) -> bool {
        self.close_history.iter().any(|&c| c)
    }

    /// True when the received bytes are not a prefix of the sent bytes.
    pub fn deviates(&self) -> bool {
        let mut pos = 0usize;
        let chunks = self.recv_inputs.iter().map(Vec::as_slice).chain(std::iter::once(self.final_input));
        for chunk in chunks {
            let end = pos + chunk.len();
            if end > self.sent.len() || self.sent[pos..end] != *chunk {
                return true;
            }
            pos = end;
        }
        false
    }
}

/// What a close function needs in order to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloseInputs {
    /// Computable from [`CloseContext`] alone.
    ContextOnly,
    /// Needs channel secrets such as the key or decryption results.
    ChannelInternals,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CloseFnMeta {
    pub name: &'static str,
    pub inputs: CloseInputs,
}

/// Reports whether a close function declares itself expressible over
/// [`CloseContext`] alone.
pub fn is_secure_close_shape(meta: &CloseFnMeta) -> bool {
    meta.inputs == CloseInputs::ContextOnly
}

pub trait CloseFn: Send + Sync {
    fn meta(&self) -> CloseFnMeta;

    /// Randomised close functions draw their coins from `rng`; deterministic
    /// ones ignore it.
    fn decide(&self, ctx: &CloseContext<'_>, rng: &mut dyn RngCore) -> bool;
}

/// Never closes.
#[derive(Clone, Copy, Debug, Default)]
pub struct NeverClose;

impl CloseFn for NeverClose {
    fn meta(&self) -> CloseFnMeta {
        CloseFnMeta { name: "never", inputs: CloseInputs::ContextOnly }
    }

    fn decide(&self, _ctx: &CloseContext<'_>, _rng: &mut dyn RngCore) -> bool {
        false
    }
}

pub fn close_never(ctx: &CloseContext<'_>) -> bool {
    NeverClose.decide(ctx, &mut rand::rngs::mock::StepRng::new(0, 0))
}

/// Closes once the receiver has taken in `limit` bytes.
#[derive(Clone, Copy, Debug)]
pub struct MaxBytesClose {
    pub limit: usize,
}

impl MaxBytesClose {
    pub fn new(limit: usize) -> Self {
        assert!(limit > 0, "close limit must be positive");
        Self { limit }
    }
}

impl CloseFn for MaxBytesClose {
    fn meta(&self) -> CloseFnMeta {
        CloseFnMeta { name: "max-bytes", inputs: CloseInputs::ContextOnly }
    }

    fn decide(&self, ctx: &CloseContext<'_>, _rng: &mut dyn RngCore) -> bool {
        !ctx.already_closed() && ctx.total_received() >= self.limit
    }
}

pub fn close_max_bytes(limit: usize) -> impl Fn(&CloseContext<'_>) -> bool {
    let f = MaxBytesClose::new(limit);
    move |ctx| f.decide(ctx, &mut rand::rngs::mock::StepRng::new(0, 0))
}

/// Closes on the first multiple of `boundary` received bytes after the
/// received stream stopped being a prefix of the sent stream.
#[derive(Clone, Copy, Debug)]
pub struct BoundaryAfterErrorClose {
    pub boundary: usize,
}

impl BoundaryAfterErrorClose {
    pub fn new(boundary: usize) -> Self {
        assert!(boundary > 0, "close boundary must be positive");
        Self { boundary }
    }
}

impl CloseFn for BoundaryAfterErrorClose {
    fn meta(&self) -> CloseFnMeta {
        CloseFnMeta { name: "boundary-after-error", inputs: CloseInputs::ContextOnly }
    }

    fn decide(&self, ctx: &CloseContext<'_>, _rng: &mut dyn RngCore) -> bool {
        !ctx.already_closed() && ctx.total_received() % self.boundary == 0 && ctx.deviates()
    }
}

pub fn close_boundary_after_error(boundary: usize) -> impl Fn(&CloseContext<'_>) -> bool {
    let f = BoundaryAfterErrorClose::new(boundary);
    move |ctx| f.decide(ctx, &mut rand::rngs::mock::StepRng::new(0, 0))
}

/// After the stream deviates, closes each call with probability `prob`.
/// Uses only [`CloseContext`] plus its own coins.
#[derive(Clone, Copy, Debug)]
pub struct RandomAfterErrorClose {
    pub prob: f64,
}

impl CloseFn for RandomAfterErrorClose {
    fn meta(&self) -> CloseFnMeta {
        CloseFnMeta { name: "random-after-error", inputs: CloseInputs::ContextOnly }
    }

    fn decide(&self, ctx: &CloseContext<'_>, rng: &mut dyn RngCore) -> bool {
        if ctx.already_closed() || !ctx.deviates() {
            return false;
        }
        let draw = rng.next_u64() as f64 / (u64::MAX as f64 + 1.0);
        draw < self.prob
    }
}

/// Metadata for a close rule that fires on the receiver's own decryption
/// failures. It needs the key, so it is not a secure close function.
pub const AUTH_FAIL_CLOSE_META: CloseFnMeta =
    CloseFnMeta { name: "auth-fail", inputs: CloseInputs::ChannelInternals };

/// Looks up a shipped close function by name.
pub fn close_fn_by_name(name: &str) -> Option<Box<dyn CloseFn>> {
    let (head, arg) = match name.split_once(':') {
        Some((h, a)) => (h, Some(a)),
        None => (name, None),
    };
    let num = |default: usize| arg.and_then(|a| a.parse().ok()).unwrap_or(default).max(1);
    match head {
        "never" => Some(Box::new(NeverClose)),
        "max-bytes" => Some(Box::new(MaxBytesClose::new(num(1 << 20)))),
        "boundary-after-error" => Some(Box::new(BoundaryAfterErrorClose::new(num(1000)))),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ctx<'a>(sent: &'a [u8], inputs: &'a [Vec<u8>], cl: &'a [bool], last: &'a [u8]) -> CloseContext<'a> {
        CloseContext { sent, recv_inputs: inputs, close_history: cl, final_input: last }
    }

    #[test]
    fn never_is_never() {
        let sent = vec![1u8; 100];
        let inputs = vec![vec![9u8; 50]];
        assert!(!close_never(&ctx(&sent, &inputs, &[false], &[1, 2])));
        assert!(!close_never(&ctx(&[], &[], &[], &[])));
    }

    #[test]
    fn max_bytes_boundary() {
        let f = close_max_bytes(100);
        let sent = vec![0u8; 200];
        let inputs = vec![vec![0u8; 90]];
        assert!(!f(&ctx(&sent, &inputs, &[false], &[0; 9])));
        assert!(f(&ctx(&sent, &inputs, &[false], &[0; 10])));
        assert!(!f(&ctx(&sent, &inputs, &[true], &[0; 60])));
    }

    #[test]
    fn boundary_after_error() {
        let f = close_boundary_after_error(1000);
        let sent = vec![0u8; 2000];
        let mut bad = vec![0u8; 1000];
        bad[500] = 1;
        let (head, tail) = bad.split_at(600);
        let inputs = vec![head.to_vec()];
        assert!(f(&ctx(&sent, &inputs, &[false], tail)));
        let clean = vec![vec![0u8; 600]];
        assert!(!f(&ctx(&sent, &clean, &[false], &[0u8; 400])));
        assert!(!f(&ctx(&sent, &inputs, &[false], &tail[1..])));
        assert!(!f(&ctx(&sent, &inputs, &[true], tail)));
    }

    #[test]
    fn bytes_beyond_sent_count_as_deviation() {
        let sent = vec![0u8; 10];
        assert!(ctx(&sent, &[], &[], &[0u8; 11]).deviates());
        assert!(!ctx(&sent, &[], &[], &[0u8; 10]).deviates());
    }

    #[test]
    fn shape_flags() {
        assert!(is_secure_close_shape(&NeverClose.meta()));
        assert!(is_secure_close_shape(&MaxBytesClose::new(5).meta()));
        assert!(is_secure_close_shape(&BoundaryAfterErrorClose::new(5).meta()));
        assert!(!is_secure_close_shape(&AUTH_FAIL_CLOSE_META));
    }

    #[test]
    fn registry() {
        assert_eq!(close_fn_by_name("never").unwrap().meta().name, "never");
        assert_eq!(close_fn_by_name("max-bytes:10").unwrap().meta().name, "max-bytes");
        assert!(close_fn_by_name("bogus").is_none());
    }

    #[test]
    fn randomised_is_reproducible_under_seed() {
        let f = RandomAfterErrorClose { prob: 0.5 };
        let sent = vec![0u8; 10];
        let c = ctx(&sent, &[], &[], &[1u8]);
        let run = |seed| {
            let mut rng = crate::rng::seeded_rng(seed);
            (0..64).map(|_| f.decide(&c, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
        assert!(run(3).iter().any(|&x| x) && run(3).iter().any(|&x| !x));
    }

    proptest! {
        #[test]
        fn boundary_rule_ignores_rechunking(
            sent in proptest::collection::vec(any::<u8>(), 0..300),
            recv in proptest::collection::vec(any::<u8>(), 1..300),
            cuts in proptest::collection::vec(any::<prop::sample::Index>(), 0..6),
            boundary in 1usize..50,
        ) {
            let f = BoundaryAfterErrorClose::new(boundary);
            let mut rng = rand::rngs::mock::StepRng::new(0, 0);
            let (body, last) = recv.split_at(recv.len() - 1);
            let mut points: Vec<usize> = cuts.iter().map(|i| i.index(body.len() + 1)).collect();
            points.sort();
            let mut chunks = Vec::new();
            let mut prev = 0;
            for p in points.into_iter().chain(std::iter::once(body.len())) {
                chunks.push(body[prev..p].to_vec());
                prev = p;
            }
            let whole = vec![body.to_vec()];
            let a = f.decide(&ctx(&sent, &chunks, &[], last), &mut rng);
            let b = f.decide(&ctx(&sent, &whole, &[], last), &mut rng);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn shipped_rules_are_coherent_and_pure(
            inputs in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..40), 1..30),
            limit in 1usize..400,
        ) {
            let sent = vec![0u8; 500];
            let rules: Vec<Box<dyn CloseFn>> = vec![
                Box::new(NeverClose),
                Box::new(MaxBytesClose::new(limit)),
                Box::new(BoundaryAfterErrorClose::new(limit)),
            ];
            for rule in rules {
                let mut rng = rand::rngs::mock::StepRng::new(0, 0);
                let mut history = Vec::new();
                for i in 0..inputs.len() {
                    let c = ctx(&sent, &inputs[..i], &history, &inputs[i]);
                    let d = rule.decide(&c, &mut rng);
                    prop_assert_eq!(d, rule.decide(&c, &mut rng));
                    history.push(d);
                }
                prop_assert!(history.iter().filter(|&&x| x).count() <= 1);
            }
        }
    }
}
