//! Element names drawn by the synthetic screen generator.
//!
//! None of these words occur in the command templates, so a phrase mentions an
//! element name only when it is meant to.

pub const DEFAULT_LEXICON: &[&str] = &[
    "cancel", "ok", "settings", "search", "menu", "back", "next", "previous", "done", "save",
    "delete", "edit", "share", "send", "reply", "forward", "archive", "refresh", "reload", "close",
    "open", "home", "profile", "account", "login", "logout", "signup", "register", "submit", "continue",
    "skip", "retry", "undo", "redo", "copy", "paste", "cut", "download", "upload", "install",
    "update", "upgrade", "help", "about", "contact", "feedback", "report", "notifications", "messages", "inbox",
    "outbox", "drafts", "trash", "spam", "favorites", "bookmarks", "history", "downloads", "library", "playlist",
    "play", "pause", "stop", "shuffle", "repeat", "volume", "mute", "camera", "gallery", "photos",
    "videos", "music", "podcasts", "news", "weather", "calendar", "clock", "alarm", "timer", "stopwatch",
    "contacts", "phone", "call", "dial", "keypad", "voicemail", "chat", "group", "friends", "followers",
    "following", "like", "comment", "subscribe", "unsubscribe", "follow", "unfollow", "block", "mute", "filter",
    "sort", "view", "grid", "list", "map", "directions", "location", "nearby", "explore", "discover",
    "trending", "popular", "recent", "new", "all", "none", "yes", "no", "accept", "decline",
    "allow", "deny", "agree", "disagree", "confirm", "apply", "reset", "clear", "add", "remove",
    "create", "compose", "attach", "upload", "scan", "print", "export", "import", "sync", "backup",
    "restore", "privacy", "security", "password", "username", "email", "language", "theme", "display", "sound",
    "battery", "storage", "network", "wifi", "bluetooth", "airplane", "hotspot", "data", "cellular", "vpn",
    "cart", "checkout", "buy", "order", "orders", "wishlist", "coupons", "payment", "wallet", "balance",
    "transfer", "deposit", "withdraw", "invest", "stocks", "crypto", "budget", "expenses", "income", "bills",
    "tickets", "flights", "hotels", "cars", "trains", "booking", "reservations", "trips", "itinerary", "passport",
    "recipes", "ingredients", "shopping", "groceries", "delivery", "pickup", "restaurants", "menus", "reviews", "ratings",
    "fitness", "workout", "steps", "sleep", "heart", "nutrition", "water", "goals", "progress", "achievements",
    "games", "store", "apps", "widgets", "wallpaper", "ringtone", "vibrate", "brightness", "keyboard", "accessibility",
    "translate", "dictionary", "notes", "reminders", "tasks", "projects", "files", "folders", "documents", "spreadsheet",
];

pub fn default_lexicon() -> Vec<String> {
    let mut words: Vec<String> = Vec::new();
    for w in DEFAULT_LEXICON {
        if !words.iter().any(|x| x == w) {
            words.push((*w).to_string());
        }
    }
    words
}
