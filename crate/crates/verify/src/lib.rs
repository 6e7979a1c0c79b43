//! Holds the `acceptance` test target, which runs every acceptance
//! criterion and prints one PASS/FAIL line per criterion. It lives in its
//! own package so that a failing criterion does not stop the other suites.
