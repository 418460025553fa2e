unsigned char scale(unsigned char x) {
    return (unsigned char)(x * 3u);
}
