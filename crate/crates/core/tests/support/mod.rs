/// Emits one `#[test]` per check plus an `ALL` table of `(name, check)`
/// pairs, so the acceptance runner can drive the same functions.
macro_rules! cases {
    ($($name:ident),* $(,)?) => {
        #[cfg(test)]
        mod cases {
            $(#[test]
            fn $name() {
                super::$name()
            })*
        }

        #[allow(dead_code)]
        pub const ALL: &[(&str, fn())] = &[$((stringify!($name), $name)),*];
    };
}
