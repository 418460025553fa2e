unsigned char accum(unsigned char a) {
    static unsigned char s = 0u;
    s = (unsigned char)(s + a);
    return s;
}
