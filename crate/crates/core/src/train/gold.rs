//! Attention and gate targets from exact string matches.

use crate::data::ontology::Ontology;

/// Targets for one turn. Row `i` of `alpha` spreads unit mass equally over
/// the tokens that are values of slot `i`, or is all zero when none are.
#[derive(Clone, Debug, PartialEq)]
pub struct GoldSupervision {
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
}

pub fn derive_gold(tokens: &[String], ont: &Ontology) -> GoldSupervision {
    let n_s = ont.num_slots();
    let mut alpha = vec![vec![0.0; tokens.len()]; n_s];
    let mut beta = vec![0.0; n_s];
    for (i, row) in alpha.iter_mut().enumerate() {
        let hits: Vec<usize> = tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| ont.value_index(i, t).is_some())
            .map(|(j, _)| j)
            .collect();
        if hits.is_empty() {
            continue;
        }
        let w = 1.0 / hits.len() as f64;
        for j in hits {
            row[j] = w;
        }
        beta[i] = 1.0;
    }
    GoldSupervision { alpha, beta }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::datagen::{build_flight_ontology, build_restaurant_ontology, FlightConfig, RestaurantConfig};
    use crate::data::ontology::tokenize;

    fn restaurant() -> Ontology {
        build_restaurant_ontology(&RestaurantConfig::default()).unwrap()
    }

    #[test]
    fn single_match() {
        let o = restaurant();
        let c = o.slot_index("Cuisine").unwrap();
        let g = derive_gold(&tokenize("i want chinese food"), &o);
        assert_eq!(g.alpha[c], vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(g.beta[c], 1.0);
    }

    #[test]
    fn no_match_gives_zero_row() {
        let o = restaurant();
        let g = derive_gold(&tokenize("hello there"), &o);
        assert!(g.alpha.iter().flatten().all(|&a| a == 0.0));
        assert!(g.beta.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn two_matches_share_mass() {
        let o = restaurant();
        let l = o.slot_index("Location").unwrap();
        let (a, b) = (&o.slot(l).values[0], &o.slot(l).values[1]);
        let toks = tokenize(&format!("not {a} but {b} please"));
        let g = derive_gold(&toks, &o);
        // Independent count: positions whose token is a Location value.
        let expect: Vec<f64> = toks
            .iter()
            .map(|t| if o.slot(l).values.contains(t) { 0.5 } else { 0.0 })
            .collect();
        assert_eq!(g.alpha[l], expect);
    }

    #[test]
    fn shared_city_list_marks_both_slots() {
        let o = build_flight_ontology(&FlightConfig::default()).unwrap();
        let city = o.slot(0).values[3].clone();
        let g = derive_gold(&tokenize(&format!("to {city}")), &o);
        assert_eq!(g.beta, vec![1.0, 1.0, 0.0]);
    }
}
