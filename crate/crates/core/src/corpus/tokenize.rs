use unicode_general_category::{get_general_category, GeneralCategory};
use unicode_normalization::UnicodeNormalization;

/// Ethiopic wordspace separates words, so it becomes a space rather than
/// vanishing.
const ETHIOPIC_WORDSPACE: char = '\u{1361}';

/// Script-specific marks removed on top of the Unicode `P*` categories.
const EXTRA_PUNCTUATION: &[char] = &[
    '\u{060C}', // ، arabic comma
    '\u{061B}', // ؛ arabic semicolon
    '\u{061F}', // ؟ arabic question mark
    '\u{1362}', // ። full stop
    '\u{1363}', // ፣ comma
    '\u{1364}', // ፤ semicolon
    '\u{1365}', // ፥ colon
    '\u{1366}', // ፦ preface colon
    '\u{1367}', // ፧ question mark
    '\u{1368}', // ፨ paragraph separator
];

pub fn is_punctuation(c: char) -> bool {
    use GeneralCategory::*;
    matches!(
        get_general_category(c),
        ConnectorPunctuation
            | DashPunctuation
            | OpenPunctuation
            | ClosePunctuation
            | InitialPunctuation
            | FinalPunctuation
            | OtherPunctuation
    ) || EXTRA_PUNCTUATION.contains(&c)
        || c == ETHIOPIC_WORDSPACE
}

/// Arabic harakat, tanween, shadda, sukun and the superscript alef.
pub fn is_arabic_diacritic(c: char) -> bool {
    matches!(c, '\u{064B}'..='\u{065F}' | '\u{0670}')
}

/// Removes punctuation (and optionally Arabic diacritics) and splits on
/// whitespace runs.
pub fn strip_punctuation_and_tokenize(text: &str, keep_diacritics: bool) -> Vec<String> {
    let mut cleaned = String::with_capacity(text.len());
    for c in text.nfc() {
        if c == ETHIOPIC_WORDSPACE {
            cleaned.push(' ');
        } else if is_punctuation(c) || (!keep_diacritics && is_arabic_diacritic(c)) {
            continue;
        } else {
            cleaned.push(c);
        }
    }
    cleaned.split_whitespace().map(str::to_owned).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn amharic_exclamation() {
        assert_eq!(
            strip_punctuation_and_tokenize("እናንተ ያመናችሁ ሆይ!", true),
            vec!["እናንተ", "ያመናችሁ", "ሆይ"]
        );
    }

    #[test]
    fn empty_and_punctuation_only() {
        assert!(strip_punctuation_and_tokenize("", true).is_empty());
        assert!(strip_punctuation_and_tokenize(" ። ، ? ", true).is_empty());
    }

    #[test]
    fn strips_harakat_when_asked() {
        // ي َ ك ْ ت ُ ب َ
        let word = "\u{064A}\u{064E}\u{0643}\u{0652}\u{062A}\u{064F}\u{0628}\u{064E}";
        assert_eq!(strip_punctuation_and_tokenize(word, false), vec!["يكتب"]);
        assert_eq!(strip_punctuation_and_tokenize(word, true), vec![word.nfc().collect::<String>()]);
    }

    #[test]
    fn diacritic_oracle_matches_codepoint_list() {
        let listed: Vec<char> = (0x064Bu32..=0x065F).chain([0x0670]).filter_map(char::from_u32).collect();
        for c in '\u{0600}'..='\u{06FF}' {
            assert_eq!(is_arabic_diacritic(c), listed.contains(&c), "{:04X}", c as u32);
        }
    }

    #[test]
    fn script_punctuation() {
        assert_eq!(
            strip_punctuation_and_tokenize("قال، نعم؛ لماذا؟", true),
            vec!["قال", "نعم", "لماذا"]
        );
        assert_eq!(
            strip_punctuation_and_tokenize("ጻፉት። ጸሐፊም፣ ይጻፍ፤ (ይመስክሩ)", true),
            vec!["ጻፉት", "ጸሐፊም", "ይጻፍ", "ይመስክሩ"]
        );
        assert_eq!(strip_punctuation_and_tokenize("አላህ፡ነው", true), vec!["አላህ", "ነው"]);
    }

    proptest! {
        #[test]
        fn tokens_are_clean(s in "\\PC{0,40}") {
            for tok in strip_punctuation_and_tokenize(&s, true) {
                prop_assert!(!tok.is_empty());
                prop_assert!(!tok.chars().any(char::is_whitespace));
                prop_assert!(!tok.chars().any(is_punctuation));
            }
        }
    }
}
