//! Tiny hypothesis/reference pairs with hand-counted BLEU and chrF++ values.
//!
//! Counts below are per order n: (matches / hypothesis n-grams / reference n-grams).

pub struct MetricFixture {
    pub name: &'static str,
    pub hyp: &'static str,
    pub reference: &'static str,
    pub bleu: f64,
    pub chrf_pp: f64,
}

pub const TOLERANCE: f64 = 0.1;

pub fn fixtures() -> Vec<MetricFixture> {
    vec![
        MetricFixture {
            name: "identity",
            hyp: "the cat sat on the mat",
            reference: "the cat sat on the mat",
            bleu: 100.0,
            chrf_pp: 100.0,
        },
        // BLEU: every precision is 1 (n > 1 smoothed as 1/1 when empty), BP = exp(1 - 6/3).
        // chrF++: P = 1 at every order; char recall 9/17 8/16 7/15 6/14 5/13 4/12,
        // word recall 3/6 2/5; R = mean = 0.4983..; F2 = 5PR / (4P + R).
        MetricFixture {
            name: "short hypothesis",
            hyp: "the cat sat",
            reference: "the cat sat on the mat",
            bleu: 36.7879,
            chrf_pp: 49.8360,
        },
        // BLEU: 5/6, (3+1)/(5+1), (2+1)/(4+1), (1+1)/(3+1); BP = 1.
        // chrF++: equal lengths so P = R per order: chars 14/17 12/16 10/15 8/14 7/13 6/12,
        // words 5/6 3/5; score = 100 * mean.
        MetricFixture {
            name: "one substituted word",
            hyp: "the dog sat on the mat",
            reference: "the cat sat on the mat",
            bleu: 63.8943,
            chrf_pp: 66.0427,
        },
        // BLEU tokens [Hello , world !] vs [Hello world !]: 3/4, (1+1)/(3+1), (0+1)/(2+1),
        // (0+1)/(1+1); BP = 1; geometric mean of 1/16 is 1/2.
        // chrF++ chars P: 11/12 9/11 7/10 5/9 3/8 1/7, R: 11/11 9/10 7/9 5/8 3/7 1/6;
        // words P: 3/4 1/3, R: 3/3 1/2.
        MetricFixture {
            name: "extra comma",
            hyp: "Hello, world!",
            reference: "Hello world!",
            bleu: 50.0,
            chrf_pp: 65.1855,
        },
        // BLEU: no unigram match. chrF++: chars 3/4 2/3 1/2 0/1 (orders 5 and 6 empty),
        // words 0/1 (bigrams empty); mean over the 5 non-empty orders.
        MetricFixture {
            name: "one character off",
            hyp: "abcd",
            reference: "abce",
            bleu: 0.0,
            chrf_pp: 38.3333,
        },
    ]
}
