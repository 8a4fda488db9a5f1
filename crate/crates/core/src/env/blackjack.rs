//! Single-deck Blackjack with partial card visibility.
//!
//! One 52-card deck is shuffled per episode; the player and dealer receive
//! two cards each (player, dealer, player, dealer), the player bets one unit
//! and acts with Hit/Stand/DoubleDown/Surrender until the hand settles. All
//! reward arrives on the final transition; intermediate steps pay 0 and the
//! support of the settlement reward is {-2, -1, -0.5, 0, +1, +1.5, +2}.
//!
//! Observations carry five components: the player's initial hand, the
//! dealer's initial hand, a fixed-depth window of the post-deal deck, the
//! player's current count, and the action history. Cards encode as a
//! `(numeric value, ace flag)` pair; anything the player has not seen is
//! masked to `(0, 0)`. The non-cheater sees the dealer upcard and the cards
//! its own draws have turned face-up; the cheater (and the detector) sees the
//! hole card and the deck window outright.

use super::{EnvSpec, Environment, EpisodeRecord, Observability, StepOutcome};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub mod action {
    pub const HIT: usize = 0;
    pub const STAND: usize = 1;
    pub const DOUBLE_DOWN: usize = 2;
    pub const SURRENDER: usize = 3;
}

pub fn action_name(action: usize) -> &'static str {
    match action {
        action::HIT => "hit",
        action::STAND => "stand",
        action::DOUBLE_DOWN => "double_down",
        action::SURRENDER => "surrender",
        _ => "?",
    }
}

/// `rank` is 1 (ace) through 13 (king); `suit` is display-only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Card {
    pub rank: u8,
    pub suit: u8,
}

impl Card {
    /// Hard counting value: ace as 1, faces as 10.
    pub fn count_value(self) -> u32 {
        match self.rank {
            1 => 1,
            11..=13 => 10,
            r => r as u32,
        }
    }

    pub fn is_ace(self) -> bool {
        self.rank == 1
    }

    /// Numeric half of the card encoding pair; aces carry their high value,
    /// the flag already distinguishes them.
    pub fn encode_value(self) -> u32 {
        if self.is_ace() {
            11
        } else {
            self.count_value()
        }
    }

    pub fn label(self) -> String {
        let rank = match self.rank {
            1 => "A".to_string(),
            10 => "T".to_string(),
            11 => "J".to_string(),
            12 => "Q".to_string(),
            13 => "K".to_string(),
            r => r.to_string(),
        };
        let suit = ['♠', '♥', '♦', '♣'][(self.suit as usize) % 4];
        format!("{rank}{suit}")
    }
}

/// Best non-busting total (or the minimum total if every choice busts) and
/// whether an ace is currently counted as 11.
pub fn hand_count(cards: &[Card]) -> (u32, bool) {
    let hard: u32 = cards.iter().map(|c| c.count_value()).sum();
    let has_ace = cards.iter().any(|c| c.is_ace());
    if has_ace && hard + 10 <= 21 {
        (hard + 10, true)
    } else {
        (hard, false)
    }
}

fn default_reveal_depth() -> usize {
    13
}
fn default_max_len() -> usize {
    12
}
fn default_history_pad() -> usize {
    12
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlackjackConfig {
    /// How many post-deal deck cards the encodings expose.
    #[serde(default = "default_reveal_depth")]
    pub reveal_depth: usize,
    /// Hard step cap; hands settle in at most 10 actions, so the default
    /// never truncates.
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    /// Action-history slots in the flat encodings; unused slots stay zero.
    #[serde(default = "default_history_pad")]
    pub history_pad: usize,
}

impl Default for BlackjackConfig {
    fn default() -> Self {
        BlackjackConfig {
            reveal_depth: default_reveal_depth(),
            max_len: default_max_len(),
            history_pad: default_history_pad(),
        }
    }
}

impl BlackjackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reveal_depth == 0 || self.reveal_depth > 48 {
            return Err(Error::Config(format!(
                "reveal_depth must be in 1..=48 (52 cards minus the deal), got {}",
                self.reveal_depth
            )));
        }
        // The longest possible hand is 9 safe hits plus a settling action.
        if self.max_len < 10 {
            return Err(Error::Config("max_len below 10 could cut a hand short".into()));
        }
        if self.history_pad < 10 {
            return Err(Error::Config("history_pad below 10 can overflow".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    PlayerTurn,
    Settled,
}

/// Ground-truth hand state. The post-deal deck is kept as an immutable
/// snapshot plus a drawn-prefix counter so encodings have stable card slots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlackjackState {
    pub player: Vec<Card>,
    /// `dealer[0]` is the upcard, `dealer[1]` the hole card.
    pub dealer: Vec<Card>,
    /// The 48 cards left after dealing, in draw order; never mutated.
    pub initial_deck: Vec<Card>,
    /// Cards of `initial_deck` already face-up (player and dealer draws).
    pub drawn: usize,
    /// 1, or 2 after DoubleDown.
    pub bet: u8,
    pub action_history: Vec<usize>,
    pub phase: Phase,
}

impl BlackjackState {
    pub fn remaining_deck(&self) -> &[Card] {
        &self.initial_deck[self.drawn..]
    }

    fn draw(&mut self) -> Result<Card> {
        let card = *self
            .initial_deck
            .get(self.drawn)
            .ok_or_else(|| Error::Contract("deck exhausted".into()))?;
        self.drawn += 1;
        Ok(card)
    }
}

pub struct Blackjack {
    cfg: BlackjackConfig,
}

impl Blackjack {
    pub fn new(cfg: BlackjackConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Blackjack { cfg })
    }

    pub fn config(&self) -> &BlackjackConfig {
        &self.cfg
    }

    /// Dealer reveals the hole card, draws until the count reaches at least
    /// 17 (standing on every 17, soft or hard), then the hand settles.
    /// Requires the player to have stopped without busting. Returns the
    /// settlement reward and marks the state settled.
    pub fn dealer_play_and_settle(&self, state: &mut BlackjackState) -> Result<f64> {
        if state.phase == Phase::Settled {
            return Err(Error::Contract("settlement on a settled hand".into()));
        }
        let (player_count, _) = hand_count(&state.player);
        if player_count > 21 {
            return Err(Error::Contract("dealer does not play against a busted hand".into()));
        }
        while hand_count(&state.dealer).0 < 17 {
            let card = state.draw()?;
            state.dealer.push(card);
        }
        state.phase = Phase::Settled;
        let dealer_count = hand_count(&state.dealer).0;
        let bet = state.bet as f64;
        // The 1.5x payout needs the hand to still be the initial ace + ten;
        // hitting or doubling grows the hand and forfeits the bonus.
        let natural = state.player.len() == 2 && player_count == 21;
        Ok(if dealer_count > 21 || dealer_count < player_count {
            if natural {
                1.5 * bet
            } else {
                bet
            }
        } else if dealer_count == player_count {
            0.0
        } else {
            -bet
        })
    }

    fn push_card_pair<T: Scalar>(out: &mut Vec<T>, card: Option<Card>) {
        match card {
            Some(c) => {
                out.push(T::from_usize_(c.encode_value() as usize) / T::fl(11.0));
                out.push(if c.is_ace() { T::one() } else { T::zero() });
            }
            None => {
                out.push(T::zero());
                out.push(T::zero());
            }
        }
    }

    /// Five-component flat bundle. `hole_visible`/`deck_visible` select the
    /// masking; `history` is whatever action list the consumer attributes to
    /// the player (the live history for observations, the full episode for
    /// the detector).
    fn bundle<T: Scalar>(
        &self,
        state: &BlackjackState,
        hole_visible: bool,
        deck_visible: impl Fn(usize) -> bool,
        history: &[usize],
    ) -> Vec<T> {
        let mut out = Vec::with_capacity(self.bundle_width());
        Self::push_card_pair(&mut out, Some(state.player[0]));
        Self::push_card_pair(&mut out, Some(state.player[1]));
        Self::push_card_pair(&mut out, Some(state.dealer[0]));
        Self::push_card_pair(&mut out, if hole_visible { Some(state.dealer[1]) } else { None });
        for i in 0..self.cfg.reveal_depth {
            let card = state.initial_deck[i];
            Self::push_card_pair(&mut out, if deck_visible(i) { Some(card) } else { None });
        }
        out.push(T::from_usize_(hand_count(&state.player).0 as usize) / T::fl(21.0));
        let mut slots = vec![T::zero(); 4 * self.cfg.history_pad];
        for (i, &a) in history.iter().take(self.cfg.history_pad).enumerate() {
            slots[4 * i + a] = T::one();
        }
        out.extend(slots);
        out
    }

    fn bundle_width(&self) -> usize {
        2 * 2 + 2 * 2 + 2 * self.cfg.reveal_depth + 1 + 4 * self.cfg.history_pad
    }

    /// Hand summary in the style of the environment's tabular visualization:
    /// initial hands and the deck window, with parentheses on every card the
    /// given observability cannot see.
    pub fn dump(&self, state: &BlackjackState, mode: Observability) -> String {
        let full = mode == Observability::Full;
        let wrap = |card: Card, visible: bool| {
            if visible {
                card.label()
            } else {
                format!("({})", card.label())
            }
        };
        let dealer = format!(
            "{}, {}",
            wrap(state.dealer[0], true),
            wrap(state.dealer[1], full || state.phase == Phase::Settled)
        );
        let player =
            format!("{}, {}", wrap(state.player[0], true), wrap(state.player[1], true));
        let deck: Vec<String> = (0..self.cfg.reveal_depth.min(state.initial_deck.len()))
            .map(|i| wrap(state.initial_deck[i], full || i < state.drawn))
            .collect();
        let actions: Vec<&str> =
            state.action_history.iter().map(|&a| action_name(a)).collect();
        format!(
            "dealer  | {} | {}\nplayer  | {} | {}\n",
            dealer,
            deck.join(", "),
            player,
            actions.join(", ")
        )
    }
}

impl EnvSpec for Blackjack {
    type State = BlackjackState;

    fn name(&self) -> &'static str {
        "blackjack"
    }

    fn action_count(&self) -> usize {
        4
    }

    fn obs_width(&self, mode: Observability) -> usize {
        match mode {
            Observability::Partial => self.bundle_width(),
            // Appends the unmasked dealer hand and deck window.
            Observability::Full => self.bundle_width() + 4 + 2 * self.cfg.reveal_depth,
        }
    }

    fn max_len(&self) -> usize {
        self.cfg.max_len
    }

    fn detector_width(&self) -> usize {
        self.bundle_width()
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> Result<Self::State> {
        let mut shoe = Vec::with_capacity(52);
        for suit in 0..4u8 {
            for rank in 1..=13u8 {
                shoe.push(Card { rank, suit });
            }
        }
        shoe.shuffle(rng);
        let player = vec![shoe[0], shoe[2]];
        let dealer = vec![shoe[1], shoe[3]];
        Ok(BlackjackState {
            player,
            dealer,
            initial_deck: shoe.split_off(4),
            drawn: 0,
            bet: 1,
            action_history: Vec::new(),
            phase: Phase::PlayerTurn,
        })
    }

    fn is_terminal(&self, state: &Self::State) -> bool {
        state.phase == Phase::Settled
    }
}

impl<T: Scalar> Environment<T> for Blackjack {
    fn step(&self, state: &Self::State, action: usize) -> Result<StepOutcome<Self::State, T>> {
        if state.phase == Phase::Settled {
            return Err(Error::Contract("action on a settled blackjack hand".into()));
        }
        let mut next = state.clone();
        let reward: f64 = match action {
            action::HIT => {
                let card = next.draw()?;
                next.player.push(card);
                next.action_history.push(action::HIT);
                if hand_count(&next.player).0 > 21 {
                    next.phase = Phase::Settled;
                    -(next.bet as f64)
                } else {
                    0.0
                }
            }
            action::STAND => {
                next.action_history.push(action::STAND);
                self.dealer_play_and_settle(&mut next)?
            }
            action::DOUBLE_DOWN => {
                next.bet = 2;
                let card = next.draw()?;
                next.player.push(card);
                next.action_history.push(action::DOUBLE_DOWN);
                if hand_count(&next.player).0 > 21 {
                    next.phase = Phase::Settled;
                    -2.0
                } else {
                    self.dealer_play_and_settle(&mut next)?
                }
            }
            action::SURRENDER => {
                // Half the bet on the first turn; afterwards it is an
                // immediate loss of twice the bet.
                let reward = if next.action_history.is_empty() { -0.5 } else { -2.0 };
                next.action_history.push(action::SURRENDER);
                next.phase = Phase::Settled;
                reward
            }
            other => {
                return Err(Error::Contract(format!("invalid blackjack action {other}")));
            }
        };
        let terminated = next.phase == Phase::Settled;
        Ok(StepOutcome { next_state: next, reward: T::fl(reward), terminated, truncated: false })
    }

    fn observe(&self, state: &Self::State, mode: Observability) -> Vec<T> {
        let drawn = state.drawn;
        let mut out: Vec<T> =
            self.bundle(state, false, |i| i < drawn, &state.action_history);
        if mode == Observability::Full {
            Self::push_card_pair(&mut out, Some(state.dealer[0]));
            Self::push_card_pair(&mut out, Some(state.dealer[1]));
            for i in 0..self.cfg.reveal_depth {
                Self::push_card_pair(&mut out, Some(state.initial_deck[i]));
            }
        }
        out
    }

    fn encode_detector(&self, episode: &EpisodeRecord<T, Self::State>) -> Vec<T> {
        assert!(!episode.states.is_empty(), "cannot encode an empty episode");
        // Full-visibility view of the initial state plus what the player did.
        self.bundle(&episode.states[0], true, |_| true, &episode.actions)
    }
}
