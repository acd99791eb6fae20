// Placeholder; the CLI grows with the library.
int main() { return 0; }
