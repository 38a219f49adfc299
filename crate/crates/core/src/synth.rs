//! Template-generated AntiScam-style corpora for scaled experiments.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AnnotatedDialog, Corpus, Sentence, SlotLexicon, Speaker, Taxonomy, Turn};

type Act = (&'static str, &'static str);

const HUMAN_TEMPLATES: &[(Act, &[&str])] = &[
    (
        ("greeting", "others"),
        &[
            "Hello, this is your bank calling.",
            "Hi there, I am calling from the bank.",
            "Good morning, this is customer service.",
        ],
    ),
    (
        ("elicitation", "name"),
        &["May I have your full name?", "What is your name?", "Could you tell me your name?"],
    ),
    (
        ("elicitation", "phone_num"),
        &["What is your phone number?", "Can you give me a phone number to reach you?"],
    ),
    (
        ("elicitation", "address"),
        &["What is your home address?", "Please confirm your address."],
    ),
    (
        ("elicitation", "card_num"),
        &["Can I have your card number?", "Please read me your credit card number."],
    ),
    (
        ("elicitation", "card_cvs"),
        &["What is the security code on the back of your card?", "I need the three digit code on your card."],
    ),
    (
        ("elicitation", "card_date"),
        &["When does your card expire?", "What is the expiration date of your card?"],
    ),
    (
        ("providing_information", "order_detail"),
        &["Your order of a new laptop has been placed.", "We received an order for a television on your account."],
    ),
    (("thanking", "others"), &["Thank you for your time.", "Thanks for your help."]),
];

/// Scripted system reply per human act: the first sentence is fixed by the
/// act, an optional follow-up sentence is appended at random.
const SCRIPTED_REPLIES: &[(Act, Act, &[&str], Option<(Act, &str)>)] = &[
    (
        ("greeting", "others"),
        ("greeting", "others"),
        &["Hello, who is this?", "Hi, what is this about?"],
        None,
    ),
    (
        ("elicitation", "name"),
        ("providing_information", "name"),
        &["My name is <name>.", "Sure, it is <name>."],
        None,
    ),
    (
        ("elicitation", "phone_num"),
        ("providing_information", "phone_num"),
        &["My number is <phone_num>.", "You can call me at <phone_num>."],
        None,
    ),
    (
        ("elicitation", "address"),
        ("providing_information", "address"),
        &["I live at <address>.", "My address is <address>."],
        None,
    ),
    (
        ("elicitation", "card_num"),
        ("refusal", "card_num"),
        &["I will not share my card number.", "No, I do not give out my card number."],
        Some((("open_question", "others"), "Why do you need it?")),
    ),
    (
        ("elicitation", "card_cvs"),
        ("refusal", "card_cvs"),
        &["I am not telling you my security code.", "That code stays private."],
        None,
    ),
    (
        ("elicitation", "card_date"),
        ("open_question", "card_date"),
        &["Why do you need my card date?", "What do you want with the expiration date?"],
        None,
    ),
    (
        ("providing_information", "order_detail"),
        ("negative_answer", "order_detail"),
        &["I did not order anything.", "That order is not mine."],
        Some((("yes_no_question", "others"), "Is this a scam?")),
    ),
    (
        ("thanking", "others"),
        ("closing", "others"),
        &["Goodbye.", "Okay, bye."],
        None,
    ),
];

/// The scripted system act answering a human act.
pub fn scripted_reply(intent: &str, slot: &str) -> Option<(&'static str, &'static str)> {
    SCRIPTED_REPLIES
        .iter()
        .find(|(h, ..)| h.0 == intent && h.1 == slot)
        .map(|(_, s, ..)| *s)
}

const FIRST: [&str; 8] = ["jim", "ana", "tom", "lucy", "omar", "mei", "raj", "sara"];
const LAST: [&str; 8] = ["lee", "garcia", "smith", "chen", "okafor", "novak", "patel", "brown"];
const STREETS: [&str; 6] = ["oak street", "elm avenue", "pine road", "lake drive", "hill lane", "park way"];

fn digits<R: Rng>(rng: &mut R, n: usize) -> String {
    (0..n).map(|_| char::from(b'0' + rng.random_range(0..10u8))).collect()
}

/// A persona with random values; redrawn until no value contains another.
fn persona<R: Rng>(rng: &mut R) -> SlotLexicon {
    loop {
        let name = format!("{} {}", FIRST.choose(rng).unwrap(), LAST.choose(rng).unwrap());
        let phone = format!("{}-{}-{}", digits(rng, 3), digits(rng, 3), digits(rng, 4));
        let address = format!("{} {}", rng.random_range(10..999), STREETS.choose(rng).unwrap());
        let card = format!("{}-{}-{}-{}", digits(rng, 4), digits(rng, 4), digits(rng, 4), digits(rng, 4));
        let pairs = [
            ("name", name.as_str()),
            ("phone_num", phone.as_str()),
            ("address", address.as_str()),
            ("card_num", card.as_str()),
        ];
        if let Ok(lex) = SlotLexicon::from_pairs(pairs) {
            return lex;
        }
    }
}

fn fill(template: &str, lexicon: &SlotLexicon) -> String {
    let mut out = template.to_string();
    for (slot, value) in lexicon.iter() {
        out = out.replace(&format!("<{slot}>"), value);
    }
    out
}

fn human_turn<R: Rng>(rng: &mut R, act: Act) -> Turn {
    let (_, texts) = HUMAN_TEMPLATES
        .iter()
        .find(|(a, _)| *a == act)
        .expect("template for every human act");
    Turn::new(
        Speaker::Human,
        vec![Sentence::new(*texts.choose(rng).unwrap(), act.0, act.1)],
    )
}

fn dialog(id: String, lexicon: SlotLexicon, turns: Vec<Turn>) -> AnnotatedDialog {
    AnnotatedDialog {
        id,
        private_info: lexicon,
        turns,
        outcome: Default::default(),
    }
}

/// Dialogs opening with a greeting, then one to three distinct requests,
/// then a thank-you half of the time. Each system reply's first act is a
/// function of the human act, so gold replies never repeat an elicitation
/// or a disclosure.
pub fn scripted_corpus(dialogs: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let requests: Vec<Act> = HUMAN_TEMPLATES[1..HUMAN_TEMPLATES.len() - 1].iter().map(|(a, _)| *a).collect();
    let out = (0..dialogs)
        .map(|i| {
            let lexicon = persona(&mut rng);
            let mut acts = vec![("greeting", "others")];
            let mut pool = requests.clone();
            pool.shuffle(&mut rng);
            let n = rng.random_range(1..=3);
            acts.extend(pool.into_iter().take(n));
            if rng.random_bool(0.5) {
                acts.push(("thanking", "others"));
            }
            let mut turns = Vec::new();
            for act in acts {
                turns.push(human_turn(&mut rng, act));
                let (_, reply, texts, extra) = SCRIPTED_REPLIES
                    .iter()
                    .find(|(h, ..)| *h == act)
                    .expect("reply for every human act");
                let mut sentences = vec![Sentence::new(fill(texts.choose(&mut rng).unwrap(), &lexicon), reply.0, reply.1)];
                if let Some((extra_act, text)) = extra {
                    if rng.random_bool(0.5) {
                        sentences.push(Sentence::new(*text, extra_act.0, extra_act.1));
                    }
                }
                turns.push(Turn::new(Speaker::System, sentences));
            }
            dialog(format!("scripted-{i:04}"), lexicon, turns)
        })
        .collect();
    Corpus::new(Taxonomy::antiscam(), out)
}

/// Dialogs in which the human asks for name, phone number or address three
/// or four times with repetition, and the system discloses or refuses each
/// request at random. Gold replies often disclose a slot twice.
pub fn adversarial_corpus(dialogs: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slots = ["name", "phone_num", "address"];
    let out = (0..dialogs)
        .map(|i| {
            let lexicon = persona(&mut rng);
            let mut turns = vec![
                human_turn(&mut rng, ("greeting", "others")),
                Turn::new(
                    Speaker::System,
                    vec![Sentence::new("Hello, who is this?", "greeting", "others")],
                ),
            ];
            for _ in 0..rng.random_range(3..=4) {
                let slot = *slots.choose(&mut rng).unwrap();
                turns.push(human_turn(&mut rng, ("elicitation", slot)));
                let said = slot.replace('_', " ").replace("phone num", "phone number");
                let reply = if rng.random_bool(0.5) {
                    Sentence::new(
                        format!("My {said} is {}.", lexicon.get(slot).unwrap()),
                        "providing_information",
                        slot,
                    )
                } else {
                    Sentence::new(format!("I would rather not say my {said}."), "refusal", slot)
                };
                turns.push(Turn::new(Speaker::System, vec![reply]));
            }
            dialog(format!("adversarial-{i:04}"), lexicon, turns)
        })
        .collect();
    Corpus::new(Taxonomy::antiscam(), out)
}
