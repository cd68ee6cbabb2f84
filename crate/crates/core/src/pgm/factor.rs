/// Table factor over discrete variables. Values are row-major with the last
/// variable varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    vars: Vec<usize>,
    cards: Vec<usize>,
    values: Vec<f64>,
}

fn strides(cards: &[usize]) -> Vec<usize> {
    let mut s = vec![1; cards.len()];
    for i in (0..cards.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * cards[i + 1];
    }
    s
}

impl Factor {
    pub fn new(vars: Vec<usize>, cards: Vec<usize>, values: Vec<f64>) -> Self {
        assert_eq!(vars.len(), cards.len());
        assert_eq!(values.len(), cards.iter().product::<usize>());
        Factor { vars, cards, values }
    }

    pub fn scalar(v: f64) -> Self {
        Factor {
            vars: Vec::new(),
            cards: Vec::new(),
            values: vec![v],
        }
    }

    pub fn vars(&self) -> &[usize] {
        &self.vars
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn contains(&self, var: usize) -> bool {
        self.vars.contains(&var)
    }

    pub fn card_of(&self, var: usize) -> Option<usize> {
        self.vars.iter().position(|v| *v == var).map(|i| self.cards[i])
    }

    pub fn product(&self, other: &Factor) -> Factor {
        let mut vars = self.vars.clone();
        let mut cards = self.cards.clone();
        for (v, c) in other.vars.iter().zip(&other.cards) {
            if !vars.contains(v) {
                vars.push(*v);
                cards.push(*c);
            }
        }
        // Stride of each union variable inside each operand (0 when absent).
        let map = |f: &Factor| -> Vec<usize> {
            let st = strides(&f.cards);
            vars.iter()
                .map(|v| f.vars.iter().position(|x| x == v).map_or(0, |i| st[i]))
                .collect()
        };
        let sa = map(self);
        let sb = map(other);
        let total: usize = cards.iter().product();
        let mut values = Vec::with_capacity(total);
        let mut idx = vec![0usize; vars.len()];
        let (mut ia, mut ib) = (0usize, 0usize);
        for _ in 0..total {
            values.push(self.values[ia] * other.values[ib]);
            for k in (0..vars.len()).rev() {
                idx[k] += 1;
                ia += sa[k];
                ib += sb[k];
                if idx[k] < cards[k] {
                    break;
                }
                ia -= sa[k] * cards[k];
                ib -= sb[k] * cards[k];
                idx[k] = 0;
            }
        }
        Factor { vars, cards, values }
    }

    /// Restricts `var` to `value`, dropping it from the scope.
    pub fn reduce(&self, var: usize, value: usize) -> Factor {
        let Some(pos) = self.vars.iter().position(|v| *v == var) else {
            return self.clone();
        };
        self.collapse(pos, |slice| slice[value])
    }

    pub fn sum_out(&self, var: usize) -> Factor {
        let Some(pos) = self.vars.iter().position(|v| *v == var) else {
            return self.clone();
        };
        self.collapse(pos, |slice| slice.iter().sum())
    }

    fn collapse(&self, pos: usize, f: impl Fn(&[f64]) -> f64) -> Factor {
        let st = strides(&self.cards);
        let card = self.cards[pos];
        let inner = st[pos];
        let outer: usize = self.cards[..pos].iter().product();
        let mut values = Vec::with_capacity(self.values.len() / card);
        let mut buf = vec![0.0; card];
        for o in 0..outer {
            for i in 0..inner {
                for (k, b) in buf.iter_mut().enumerate() {
                    *b = self.values[o * card * inner + k * inner + i];
                }
                values.push(f(&buf));
            }
        }
        let mut vars = self.vars.clone();
        let mut cards = self.cards.clone();
        vars.remove(pos);
        cards.remove(pos);
        Factor { vars, cards, values }
    }

    /// Renames every variable through `f`.
    pub fn relabel(&self, f: impl Fn(usize) -> usize) -> Factor {
        Factor {
            vars: self.vars.iter().map(|v| f(*v)).collect(),
            cards: self.cards.clone(),
            values: self.values.clone(),
        }
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn scale(&mut self, k: f64) {
        for v in &mut self.values {
            *v *= k;
        }
    }
}
